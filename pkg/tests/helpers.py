"""Monte Carlo and brute-force oracles shared by module and acceptance tests."""

import math

import numpy as np

from statcert.drift import (
    DiscreteDistribution,
    mmd_permutation_test,
    shift_bound_check,
    total_variation_discrete,
    tv_equality_witness,
)
from statcert.sampling import splitmix64


def mmd_rejection_rate(reps, n_per_batch, dim, shift, alpha=0.05,
                       n_perm=500, base_seed=909090):
    """Fraction of repetitions where the MMD test rejects.

    Each repetition draws fresh reference/production Gaussians; `shift`
    displaces the first coordinate of the production batch.
    """
    rejections = 0
    for r in range(reps):
        rng = np.random.default_rng(splitmix64(base_seed, r))
        x = rng.normal(size=(n_per_batch, dim))
        y = rng.normal(size=(n_per_batch, dim))
        y[:, 0] += shift
        result = mmd_permutation_test(x, y, n_perm=n_perm,
                                      seed=splitmix64(base_seed, 10_000 + r),
                                      alpha=alpha)
        rejections += int(result.rejected)
    return rejections / reps


def binomial_interval_95(n, p):
    """Central 95% range of Binomial(n, p) successes, by direct summation.

    Log-space pmf so large n never overflows."""
    log_pmf = np.array([
        math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
        + k * math.log(p) + (n - k) * math.log1p(-p)
        for k in range(n + 1)])
    cdf = np.cumsum(np.exp(log_pmf))
    lo = int(np.searchsorted(cdf, 0.025))
    hi = int(np.searchsorted(cdf, 0.975))
    return lo, hi


def random_tv_bound_violations(n_tuples, support, seed=515151):
    """Count violations of the error-gap bound on random (h, f, p, q)."""
    rng = np.random.default_rng(seed)
    violations = 0
    max_slack = -np.inf
    for _ in range(n_tuples):
        p = DiscreteDistribution(rng.dirichlet(np.ones(support)))
        q = DiscreteDistribution(rng.dirichlet(np.ones(support)))
        h = rng.uniform(size=support)
        f = rng.uniform(size=support)
        res = shift_bound_check(h, f, p, q)
        if not res.holds:
            violations += 1
        max_slack = max(max_slack, res.gap - res.tv)
    return violations, max_slack


def random_ensemble(rng, max_k=32, max_c=10):
    """Random ensemble: K in [1, max_k], C in [2, max_c], Dirichlet rows."""
    from statcert.uncertainty import EnsemblePrediction

    k = int(rng.integers(1, max_k + 1))
    c = int(rng.integers(2, max_c + 1))
    rows = rng.dirichlet(np.full(c, 0.5), size=k)
    rows = rows / rows.sum(axis=1, keepdims=True)
    return EnsemblePrediction(rows)


def max_additivity_error(n_ensembles, seed=737373):
    """Worst |total - (aleatoric + epistemic)| over random ensembles."""
    from statcert.uncertainty import decompose

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_ensembles):
        d = decompose(random_ensemble(rng))
        worst = max(worst, abs(d.total - (d.aleatoric + d.epistemic)))
    return worst


def witness_equality_error(n_tuples, support, seed=626262):
    """Largest |gap - tv| over random (p, q) with the derived witness."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_tuples):
        p = DiscreteDistribution(rng.dirichlet(np.ones(support)))
        q = DiscreteDistribution(rng.dirichlet(np.ones(support)))
        h, f = tv_equality_witness(p, q)
        res = shift_bound_check(h, f, p, q)
        tv = total_variation_discrete(p, q)
        worst = max(worst, abs(res.gap - tv))
    return worst
