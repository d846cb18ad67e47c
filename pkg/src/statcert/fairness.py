"""Group-fairness metrics on a binary (group, label, prediction) cube,
Pareto-front computation over candidate models, and bootstrap gating of
fairness requirements.

Binary group and binary outcome only. Parity is reported signed (positive
favors group a=1); gating always uses absolute violations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .errors import EmptyCell, EmptyGroup, InvalidResampleCount, ValidationError
from .stattest import BOOTSTRAP_MIN_B, TestResult, percentile_pvalue

FAIRNESS_METRICS = ("statistical_parity", "equal_opportunity", "equalized_odds")


@dataclass(frozen=True)
class GroupedOutcomes:
    """2 x 2 x 2 contingency cube: counts[a, y, yhat]."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (2, 2, 2):
            raise ValidationError("cube must be 2x2x2 (group, label, prediction)")
        if not np.issubdtype(c.dtype, np.integer) or np.any(c < 0):
            raise ValidationError("counts must be non-negative integers")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "GroupedOutcomes":
        a = dataset.by_role("group")
        y = dataset.by_role("label")
        yhat = dataset.by_role("prediction")
        for name, v in (("group", a), ("label", y), ("prediction", yhat)):
            vals = set(np.unique(v).tolist())
            if not vals <= {0, 1}:
                raise ValidationError(f"{name} column must be binary 0/1, saw {sorted(vals)}")
        cube = np.zeros((2, 2, 2), dtype=np.int64)
        np.add.at(cube, (a.astype(int), y.astype(int), yhat.astype(int)), 1)
        return cls(cube)

    def group_size(self, a: int) -> int:
        return int(self.counts[a].sum())

    def cell_size(self, a: int, y: int) -> int:
        return int(self.counts[a, y].sum())


def statistical_parity_diff(outcomes: GroupedOutcomes) -> float:
    """p(yhat=1 | a=1) - p(yhat=1 | a=0); positive means group 1 receives
    the positive prediction more often."""
    rates = []
    for a in (0, 1):
        n_a = outcomes.group_size(a)
        if n_a == 0:
            raise EmptyGroup(f"group a={a} has no samples")
        rates.append(int(outcomes.counts[a, :, 1].sum()) / n_a)
    return rates[1] - rates[0]


def equalized_odds_diff(outcomes: GroupedOutcomes, mode: str = "odds") -> float:
    """Conditional positive-rate gap between groups.

    opportunity: |TPR(a=1) - TPR(a=0)|, conditioning on y=1 only.
    odds: the worst gap over both label values.
    """
    if mode not in ("opportunity", "odds"):
        raise ValidationError(f"mode must be opportunity or odds, got {mode!r}")
    labels = (1,) if mode == "opportunity" else (0, 1)
    worst = 0.0
    for y in labels:
        rates = []
        for a in (0, 1):
            n_ay = outcomes.cell_size(a, y)
            if n_ay == 0:
                raise EmptyCell(f"cell (a={a}, y={y}) has no samples")
            rates.append(int(outcomes.counts[a, y, 1]) / n_ay)
        worst = max(worst, abs(rates[1] - rates[0]))
    return worst


def fairness_violation(outcomes: GroupedOutcomes, metric: str) -> float:
    """Non-negative violation used for gating (absolute value of parity)."""
    if metric == "statistical_parity":
        return abs(statistical_parity_diff(outcomes))
    if metric == "equal_opportunity":
        return equalized_odds_diff(outcomes, "opportunity")
    if metric == "equalized_odds":
        return equalized_odds_diff(outcomes, "odds")
    raise ValidationError(f"unknown fairness metric {metric!r}")


@dataclass(frozen=True)
class ModelPoint:
    model_id: str
    performance: float
    fairness_violation: float

    def __post_init__(self):
        if not (np.isfinite(self.performance) and np.isfinite(self.fairness_violation)):
            raise ValidationError("model point must be finite")
        if self.fairness_violation < 0:
            raise ValidationError("violation must be non-negative")


def pareto_front(points: list[ModelPoint]) -> list[ModelPoint]:
    """Maximal points under (performance up, violation down).

    A point is dominated when another is at least as good on both axes and
    strictly better on one; exact ties on both axes are mutually
    non-dominating and all survive. Output sorted by performance ascending.
    Single sweep over the performance-sorted list, O(n log n).
    """
    if not points:
        raise ValidationError("need at least one point")
    by_perf = sorted(points, key=lambda p: -p.performance)
    front: list[ModelPoint] = []
    best_higher = np.inf  # min violation among strictly better performers
    i = 0
    while i < len(by_perf):
        j = i
        while j < len(by_perf) and by_perf[j].performance == by_perf[i].performance:
            j += 1
        tier = by_perf[i:j]
        tier_min = min(p.fairness_violation for p in tier)
        for p in tier:
            if p.fairness_violation <= tier_min and p.fairness_violation < best_higher:
                front.append(p)
        best_higher = min(best_higher, tier_min)
        i = j
    return sorted(front, key=lambda p: p.performance)


def _resampled_violations(outcomes: GroupedOutcomes, metric: str, n_bootstrap: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Stratified bootstrap of the violation statistic.

    Parity resamples each group's (y, yhat) cell distribution with the
    group size fixed; conditional metrics resample within each (group, y)
    cell with the label margins fixed. Rows never cross strata, so every
    resample keeps the conditioning sets nonempty.
    """
    if metric == "statistical_parity":
        rates = np.zeros((2, n_bootstrap))
        for a in (0, 1):
            n_a = outcomes.group_size(a)
            if n_a == 0:
                raise EmptyGroup(f"group a={a} has no samples")
            flat = outcomes.counts[a].reshape(-1)  # cells (y0hat0, y0hat1, y1hat0, y1hat1)
            draws = rng.multinomial(n_a, flat / n_a, size=n_bootstrap)
            rates[a] = (draws[:, 1] + draws[:, 3]) / n_a
        return np.abs(rates[1] - rates[0])

    labels = (1,) if metric == "equal_opportunity" else (0, 1)
    worst = np.zeros(n_bootstrap)
    for y in labels:
        rates = np.zeros((2, n_bootstrap))
        for a in (0, 1):
            n_ay = outcomes.cell_size(a, y)
            if n_ay == 0:
                raise EmptyCell(f"cell (a={a}, y={y}) has no samples")
            p_hat = int(outcomes.counts[a, y, 1]) / n_ay
            rates[a] = rng.binomial(n_ay, p_hat, size=n_bootstrap) / n_ay
        worst = np.maximum(worst, np.abs(rates[1] - rates[0]))
    return worst


def fairness_mpr_check(outcomes: GroupedOutcomes,
                       fairness_mprs: list[tuple[str, float]],
                       n_bootstrap: int = 2000, alpha: float = 0.05,
                       seed: int = 0) -> dict[str, TestResult]:
    """One-sided bootstrap gate per fairness requirement.

    H0: violation >= max_violation; rejecting demonstrates fairness. The
    p-value is the percentile rule (r+1)/(B+1) over stratified resamples of
    the contingency cube.
    """
    if n_bootstrap < BOOTSTRAP_MIN_B:
        raise InvalidResampleCount(f"need B >= {BOOTSTRAP_MIN_B}, got {n_bootstrap}")
    results: dict[str, TestResult] = {}
    for idx, (metric, max_violation) in enumerate(fairness_mprs):
        if max_violation < 0:
            raise ValidationError("max_violation must be non-negative")
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        observed = fairness_violation(outcomes, metric)
        draws = _resampled_violations(outcomes, metric, n_bootstrap, rng)
        p_value = percentile_pvalue(draws, max_violation, "at_most")
        results[metric] = TestResult(
            test_id="fairness_bootstrap",
            statistic=observed,
            p_value=p_value,
            conf_bound=float(np.quantile(draws, 1.0 - alpha)),
            alpha_used=alpha,
            decision="reject_H0" if p_value <= alpha else "fail_to_reject",
            n=int(outcomes.counts.sum()),
            params={"metric": metric, "max_violation": max_violation,
                    "B": n_bootstrap, "seed": seed},
        )
    return results
