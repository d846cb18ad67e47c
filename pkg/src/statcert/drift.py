"""Distribution-shift detection and the total-variation performance bound.

Two detection routes: per-dimension univariate tests (KS for continuous,
chi-square for declared categorical dimensions) combined with Bonferroni,
or an unbiased MMD^2 kernel two-sample test with a permutation p-value.
Feature encoding happens outside; batches arrive as plain matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats as sps

from .core import Dataset, MetricValue, MprSpec
from .errors import (
    DegenerateTable,
    DimensionMismatch,
    DomainMismatch,
    NoShiftToClassify,
    SupportMismatch,
    TooFewSamples,
    ValidationError,
)
from .stattest import TestResult, evaluate_mpr

KS_MIN_N = 5
KS_PERMUTATION_MAX_N = 25  # at or below this, the asymptotic p is replaced


@dataclass(frozen=True)
class EncodedBatch:
    """n x d matrix of already-encoded features plus window metadata."""

    data: np.ndarray
    source: str  # reference | production
    window: tuple[int, int] | None = None
    encoder_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2:
            raise ValidationError("batch must be a 2-d matrix")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("non-finite entries in batch")
        if self.source not in ("reference", "production"):
            raise ValidationError(f"bad source tag {self.source!r}")
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def batch_from_dataset(dataset: Dataset, source: str,
                       window: tuple[int, int] | None = None) -> EncodedBatch:
    return EncodedBatch(dataset.features_matrix(), source, window)


@dataclass(frozen=True)
class ShiftVerdict:
    method: str
    aggregate: str  # no_shift | shift
    per_feature: tuple[TestResult, ...]
    severity: float | None = None
    alpha: float = 0.05
    details: dict = field(default_factory=dict)

    def as_plain(self) -> dict:
        return {
            "method": self.method,
            "aggregate": self.aggregate,
            "severity": self.severity,
            "alpha": self.alpha,
            "per_feature": [t.as_plain() for t in self.per_feature],
            "details": dict(self.details),
        }


def _ecdf_sup_distance(x: np.ndarray, y: np.ndarray) -> float:
    grid = np.concatenate([x, y])
    fx = np.searchsorted(np.sort(x), grid, side="right") / len(x)
    fy = np.searchsorted(np.sort(y), grid, side="right") / len(y)
    return float(np.max(np.abs(fx - fy)))


def ks_two_sample(x: np.ndarray, y: np.ndarray, alpha: float = 0.05,
                  seed: int = 0, n_perm: int = 2000) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test.

    D = sup |F_x - F_y|. The p-value uses the asymptotic Kolmogorov
    distribution at effective n = nx*ny/(nx+ny); when min(nx, ny) <= 25 the
    asymptotic form is unreliable and a seeded permutation p-value is used
    instead (recorded in params).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < KS_MIN_N or len(y) < KS_MIN_N:
        raise TooFewSamples(f"KS needs >= {KS_MIN_N} per sample")
    d_obs = _ecdf_sup_distance(x, y)
    nx, ny = len(x), len(y)
    if min(nx, ny) <= KS_PERMUTATION_MAX_N:
        rng = np.random.default_rng(seed)
        pooled = np.concatenate([x, y])
        count = 0
        for _ in range(n_perm):
            perm = rng.permutation(pooled)
            if _ecdf_sup_distance(perm[:nx], perm[nx:]) >= d_obs - 1e-15:
                count += 1
        p_value = (count + 1) / (n_perm + 1)
        mode = "permutation"
    else:
        en = nx * ny / (nx + ny)
        p_value = float(np.clip(special.kolmogorov(d_obs * np.sqrt(en)), 0.0, 1.0))
        mode = "asymptotic"
    return TestResult(
        test_id="ks_two_sample",
        statistic=d_obs,
        p_value=p_value,
        conf_bound=d_obs,
        alpha_used=alpha,
        decision="reject_H0" if p_value <= alpha else "fail_to_reject",
        n=nx + ny,
        params={"nx": nx, "ny": ny, "mode": mode,
                **({"seed": seed, "n_perm": n_perm} if mode == "permutation" else {})},
    )


def chi2_two_sample(x: np.ndarray, y: np.ndarray, alpha: float = 0.05) -> TestResult:
    """Two-sample chi-square homogeneity test on categorical codes.

    Categories whose expected count in either sample falls below 5 are
    merged into one rare bucket before testing; if the merged table still
    violates the floor, or fewer than two categories remain, the table is
    degenerate. Degrees of freedom: (categories - 1).
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) == 0 or len(y) == 0:
        raise DegenerateTable("empty sample")
    cats = sorted(set(np.unique(x).tolist()) | set(np.unique(y).tolist()), key=str)
    nx, ny = len(x), len(y)
    total = nx + ny

    def counts(sample, categories):
        return np.array([int(np.sum(sample == c)) for c in categories], dtype=float)

    cx, cy = counts(x, cats), counts(y, cats)
    pooled = cx + cy
    min_expected = np.minimum(nx * pooled / total, ny * pooled / total)
    rare = min_expected < 5.0
    if np.any(rare):
        keep = [c for c, r in zip(cats, rare) if not r]
        cx = np.append(counts(x, keep), cx[rare].sum())
        cy = np.append(counts(y, keep), cy[rare].sum())
        pooled = cx + cy
        min_expected = np.minimum(nx * pooled / total, ny * pooled / total)
        if np.any(min_expected < 5.0):
            raise DegenerateTable("expected counts below 5 even after merging")
    m = len(pooled)
    if m < 2:
        raise DegenerateTable("fewer than two categories")
    stat = 0.0
    for obs, n_g in ((cx, nx), (cy, ny)):
        expected = n_g * pooled / total
        stat += float(np.sum((obs - expected) ** 2 / expected))
    dof = m - 1
    p_value = float(np.clip(sps.chi2.sf(stat, dof), 0.0, 1.0))
    return TestResult(
        test_id="chi2_two_sample",
        statistic=stat,
        p_value=p_value,
        conf_bound=stat,
        alpha_used=alpha,
        decision="reject_H0" if p_value <= alpha else "fail_to_reject",
        n=total,
        params={"dof": dof, "categories": m},
    )


def median_heuristic_bandwidth(pooled: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled sample.

    Falls back to 1.0 when every pair coincides, so the kernel stays
    defined on degenerate data.
    """
    sq = _pairwise_sq_distances(pooled, pooled)
    off = sq[np.triu_indices_from(sq, k=1)]
    if len(off) == 0:
        return 1.0
    med = float(np.sqrt(np.median(off)))
    return med if med > 0 else 1.0


def _pairwise_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def mmd_permutation_test(x: np.ndarray, y: np.ndarray, n_perm: int = 1000,
                         seed: int = 0, alpha: float = 0.05,
                         bandwidth: float | None = None) -> TestResult:
    """Unbiased MMD^2 two-sample test with an RBF kernel.

    Kernel k(a, b) = exp(-|a-b|^2 / (2 h^2)) with h the pooled median
    heuristic unless given. The permutation null recomputes the U-statistic
    under random relabelings of the pooled rows; all permutations reduce to
    one matrix product against a 0/1 assignment matrix, since with unit
    kernel diagonal the statistic is a function of v'Kv and 1'Kv alone.
    p-value = (r + 1) / (n_perm + 1).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise TooFewSamples("MMD needs >= 2 rows per batch")
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"{x.shape[1]} vs {y.shape[1]} columns")
    pooled = np.vstack([x, y])
    total = n + m
    h = bandwidth if bandwidth is not None else median_heuristic_bandwidth(pooled)
    kernel = np.exp(-_pairwise_sq_distances(pooled, pooled) / (2.0 * h * h))

    ksum = float(kernel.sum())
    colsum = kernel.sum(axis=0)

    def stat_from(v_kv: np.ndarray, s_v: np.ndarray) -> np.ndarray:
        sxx = v_kv - n
        syy = ksum - 2.0 * s_v + v_kv - m
        sxy = s_v - v_kv
        return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m)

    v = np.zeros(total)
    v[:n] = 1.0
    observed = float(stat_from(np.array([v @ kernel @ v]), np.array([colsum @ v]))[0])

    rng = np.random.default_rng(seed)
    keys = rng.random((total, n_perm))
    take = np.argpartition(keys, n - 1, axis=0)[:n]  # n random rows per column
    assign = np.zeros((total, n_perm))
    np.put_along_axis(assign, take, 1.0, axis=0)
    q = kernel @ assign
    v_kv = np.einsum("ij,ij->j", assign, q)
    s_v = colsum @ assign
    null_stats = stat_from(v_kv, s_v)

    r = int(np.sum(null_stats >= observed))
    p_value = (r + 1) / (n_perm + 1)
    return TestResult(
        test_id="mmd_permutation",
        statistic=observed,
        p_value=p_value,
        conf_bound=float(np.quantile(null_stats, 1.0 - alpha)),
        alpha_used=alpha,
        decision="reject_H0" if p_value <= alpha else "fail_to_reject",
        n=total,
        params={"bandwidth": h, "n_perm": n_perm, "seed": seed, "n_x": n, "n_y": m},
    )


def multivariate_shift_test(ref: EncodedBatch, prod: EncodedBatch, alpha: float = 0.05,
                            method: str = "mmd_permutation", seed: int = 0,
                            n_perm: int = 1000,
                            categorical_dims: tuple[int, ...] = ()) -> ShiftVerdict:
    """Stage-two shift test between a reference and a production batch.

    univariate_bonferroni runs one test per dimension at level alpha/d;
    mmd_permutation runs a single kernel test at level alpha. Deterministic
    given seed.
    """
    if ref.d != prod.d:
        raise DimensionMismatch(f"reference d={ref.d}, production d={prod.d}")
    if ref.n == 0 or prod.n == 0:
        raise ValidationError("empty batch")
    if method == "univariate_bonferroni":
        per_alpha = alpha / ref.d
        results = []
        for j in range(ref.d):
            xj, yj = ref.data[:, j], prod.data[:, j]
            if j in categorical_dims:
                results.append(chi2_two_sample(xj.astype(int), yj.astype(int), per_alpha))
            else:
                results.append(ks_two_sample(xj, yj, per_alpha, seed=seed))
        shift = any(t.rejected for t in results)
        return ShiftVerdict(
            method=method,
            aggregate="shift" if shift else "no_shift",
            per_feature=tuple(results),
            severity=max(t.statistic for t in results),
            alpha=alpha,
            details={"per_dimension_alpha": per_alpha, "d": ref.d},
        )
    if method == "mmd_permutation":
        result = mmd_permutation_test(ref.data, prod.data, n_perm=n_perm,
                                      seed=seed, alpha=alpha)
        return ShiftVerdict(
            method=method,
            aggregate="shift" if result.rejected else "no_shift",
            per_feature=(result,),
            severity=result.statistic,
            alpha=alpha,
            details={"bandwidth": result.params["bandwidth"], "n_perm": n_perm},
        )
    raise ValidationError(f"unknown shift method {method!r}")


@dataclass(frozen=True)
class DiscreteDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValidationError("need a 1-d probability vector")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValidationError("entries must be >= 0 and sum to 1 within 1e-12")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def support_size(self) -> int:
        return len(self.probs)


def total_variation_discrete(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """d(p, q) = half the L1 distance; a metric on distributions, in [0, 1]."""
    if p.support_size != q.support_size:
        raise SupportMismatch(f"{p.support_size} vs {q.support_size}")
    return float(0.5 * np.sum(np.abs(p.probs - q.probs)))


@dataclass(frozen=True)
class ShiftBoundResult:
    err_p: float
    err_q: float
    gap: float
    tv: float
    holds: bool


def shift_bound_check(h: np.ndarray, f: np.ndarray, p: DiscreteDistribution,
                      q: DiscreteDistribution) -> ShiftBoundResult:
    """Check |err_p(h,f) - err_q(h,f)| <= d(p,q) on a discrete domain.

    h and f are [0,1]-valued predictor and ground-truth functions given
    pointwise on the support; err_p = sum_i p_i |h_i - f_i|. The bound holds
    for every (h, f) pair; equality is attained by the witness below.
    """
    h = np.asarray(h, dtype=float)
    f = np.asarray(f, dtype=float)
    if p.support_size != q.support_size:
        raise SupportMismatch(f"{p.support_size} vs {q.support_size}")
    if len(h) != p.support_size or len(f) != p.support_size:
        raise DomainMismatch("h and f must cover the full support")
    if np.any((h < 0) | (h > 1)) or np.any((f < 0) | (f > 1)):
        raise DomainMismatch("h and f must take values in [0, 1]")
    diff = np.abs(h - f)
    err_p = float(np.sum(p.probs * diff))
    err_q = float(np.sum(q.probs * diff))
    gap = abs(err_p - err_q)
    tv = total_variation_discrete(p, q)
    return ShiftBoundResult(err_p, err_q, gap, tv, gap <= tv + 1e-12)


def tv_equality_witness(p: DiscreteDistribution,
                        q: DiscreteDistribution) -> tuple[np.ndarray, np.ndarray]:
    """The (h, f) pair attaining |err_p - err_q| = d(p, q).

    h = indicator of {i : p_i > q_i}, f = 0: the error gap becomes
    sum over {p > q} of (p_i - q_i), which is exactly the TV distance.
    """
    if p.support_size != q.support_size:
        raise SupportMismatch(f"{p.support_size} vs {q.support_size}")
    h = (p.probs > q.probs).astype(float)
    return h, np.zeros_like(h)


@dataclass(frozen=True)
class ShiftClassification:
    label: str  # benign | malignant
    metric: MetricValue
    test: TestResult


def classify_shift(verdict: ShiftVerdict, point_check: Dataset, mpr: MprSpec,
                   alpha: float, seed: int = 0) -> ShiftClassification:
    """Classify a detected shift by point-checking the MPR on labeled data.

    Benign when the MPR test still demonstrates the requirement at the given
    alpha, malignant otherwise. The alpha is whatever the audit ledger's
    family allocates; this function does not do its own multiplicity
    accounting.
    """
    if verdict.aggregate != "shift":
        raise NoShiftToClassify("no detected shift to classify")
    metric, test = evaluate_mpr(point_check, mpr, alpha, seed=seed)
    label = "benign" if test.rejected else "malignant"
    return ShiftClassification(label, metric, test)
