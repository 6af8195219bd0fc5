"""Risk-sensitive evaluation of cost samples.

The value of a cost sample at risk sensitivity ``theta`` is the empirical
certainty equivalent ``(1/theta) log mean exp(theta C)``, the mean at
``theta = 0`` and the min/max at ``theta = -inf/+inf``.  For the empirical
measure Jensen's inequality is exact, so the value is strictly increasing
in ``theta`` unless the sample is constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "CostSample",
    "MonotonicityVerdict",
    "ExpansionResidual",
    "HistogramBin",
    "CostSummary",
    "empirical_value",
    "monotonicity_scan",
    "extremal_limits",
    "expansion_check",
    "cost_statistics",
    "quantile",
]

MONOTONE_ATOL = 1e-10


@dataclass(frozen=True)
class CostSample:
    """Total trajectory costs; entries are finite or ``+inf``."""

    costs: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("empty cost sample")
        if np.any(np.isnan(c)) or np.any(c == -math.inf):
            raise ValueError("costs must be finite or +inf")
        object.__setattr__(self, "costs", c)

    @property
    def n(self) -> int:
        return self.costs.size

    @property
    def n_infinite(self) -> int:
        return int(np.sum(np.isinf(self.costs)))

    @property
    def finite(self) -> np.ndarray:
        return self.costs[np.isfinite(self.costs)]


def _as_sample(sample) -> CostSample:
    return sample if isinstance(sample, CostSample) else CostSample(sample)


def empirical_value(sample, theta: float) -> float:
    """``(1/theta) log mean exp(theta C)`` with exact limits at ``0`` and ``+-inf``.

    Infinite costs make the value infinite for ``theta >= 0``; for
    ``theta < 0`` they carry zero weight but still count in the mean.
    """
    s = _as_sample(sample)
    c = s.costs
    if np.all(c == c[0]):
        return float(c[0])
    if theta == math.inf:
        return float(c.max())
    if theta == -math.inf:
        return float(c.min())
    has_inf = s.n_infinite > 0
    if has_inf and theta >= 0:
        return math.inf
    if theta == 0:
        return float(np.mean(c))
    fin = s.finite
    if fin.size == 0:
        return math.inf
    shift = float(np.mean(fin))
    y = np.full(c.shape, -math.inf)
    y[np.isfinite(c)] = theta * (fin - shift)
    top = y.max()
    if top <= 1.0:
        # small exponents: log1p/expm1 keep the theta -> 0 limit accurate
        lme = math.log1p(float(np.mean(np.expm1(y))))
    else:
        lme = top + math.log(float(np.mean(np.exp(y - top))))
    return shift + lme / theta


@dataclass(frozen=True)
class MonotonicityVerdict:
    verdict: str
    thetas: Tuple[float, ...]
    values: Tuple[float, ...]
    margins: Tuple[float, ...]
    offending_pair: Optional[Tuple[float, float]] = None

    @property
    def ok(self) -> bool:
        return self.verdict in ("strictly increasing", "constant", "nondecreasing")


def monotonicity_scan(sample, theta_grid: Sequence[float]) -> MonotonicityVerdict:
    """Check that the value is nondecreasing along an increasing theta grid.

    Verdicts: ``"constant"`` (all margins zero), ``"strictly increasing"``,
    ``"nondecreasing"`` (some margin within 1e-10 of zero) or ``"failed"``
    with the first pair that drops by more than 1e-10.
    """
    s = _as_sample(sample)
    grid = [float(t) for t in theta_grid]
    if len(grid) < 3:
        raise ValueError("theta grid needs at least 3 points")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("theta grid must be strictly increasing")
    vals = [empirical_value(s, t) for t in grid]
    margins = []
    for a, b in zip(vals, vals[1:]):
        margins.append(0.0 if a == b else b - a)
    constant = bool(np.all(s.costs == s.costs[0]))
    if constant:
        return MonotonicityVerdict("constant", tuple(grid), tuple(vals), tuple(margins))
    for i, m in enumerate(margins):
        if m < -MONOTONE_ATOL:
            return MonotonicityVerdict(
                "failed", tuple(grid), tuple(vals), tuple(margins), (grid[i], grid[i + 1])
            )
    verdict = "strictly increasing" if all(m > 0 for m in margins) else "nondecreasing"
    return MonotonicityVerdict(verdict, tuple(grid), tuple(vals), tuple(margins))


def extremal_limits(sample) -> Tuple[float, float]:
    """``(min, max)`` of the sample: the values at ``theta = -inf`` and ``+inf``."""
    c = _as_sample(sample).costs
    return float(c.min()), float(c.max())


@dataclass(frozen=True)
class ExpansionResidual:
    """Distance between the value and its second-order expansion at ``theta``.

    ``bound_constant`` is ``range^3 / 6``; Taylor's theorem on the cumulant
    generating function gives ``residual <= bound_constant * theta^2``.
    """

    theta: float
    residual: float
    third_abs_central_moment: float
    bound_constant: float

    @property
    def within_bound(self) -> bool:
        return self.residual <= self.bound_constant * self.theta**2 + 1e-12


def expansion_check(sample, theta: float) -> ExpansionResidual:
    s = _as_sample(sample)
    if abs(theta) > 0.1:
        raise ValueError("expansion check needs |theta| <= 0.1")
    if s.n_infinite:
        raise ValueError("expansion check needs a bounded sample")
    c = s.costs
    mean = float(np.mean(c))
    var = float(np.mean((c - mean) ** 2))
    m3 = float(np.mean(np.abs(c - mean) ** 3))
    spread = float(c.max() - c.min())
    if theta == 0:
        resid = 0.0
    else:
        resid = abs(empirical_value(s, theta) - (mean + 0.5 * theta * var))
    return ExpansionResidual(theta, resid, m3, spread**3 / 6.0)


def quantile(sorted_costs: np.ndarray, q: float) -> float:
    """Linear interpolation between order statistics (Hyndman-Fan type 7)."""
    x = sorted_costs
    h = (len(x) - 1) * q
    lo = int(math.floor(h))
    frac = h - lo
    if frac == 0 or lo + 1 >= len(x):
        return float(x[lo])
    if math.isinf(x[lo + 1]):
        return math.inf
    return float(x[lo] + frac * (x[lo + 1] - x[lo]))


@dataclass(frozen=True)
class HistogramBin:
    left: float
    right: float
    count: int
    log10_prob: Optional[float]


@dataclass(frozen=True)
class CostSummary:
    n: int
    n_infinite: int
    mean: float
    var: float
    median: float
    quantiles: Dict[float, float]
    histogram: List[HistogramBin] = field(default_factory=list)


def cost_statistics(sample, quantiles: Sequence[float] = (0.9, 0.99), n_bins: int = 30) -> CostSummary:
    """Moments, type-7 quantiles and an equal-width histogram of the costs.

    Bins span ``[min, max]`` of the finite costs; empty bins have
    ``log10_prob = None``.  Variance is the population variance.
    """
    s = _as_sample(sample)
    if s.n < 10:
        raise ValueError("need at least 10 costs")
    c = np.sort(s.costs)
    fin = s.finite
    if s.n_infinite:
        mean = var = math.inf
    else:
        mean = float(np.mean(c))
        var = float(np.mean((c - mean) ** 2))
    qs = {float(q): quantile(c, q) for q in quantiles}
    bins = []
    if fin.size:
        counts, edges = np.histogram(fin, bins=n_bins, range=(fin.min(), fin.max()))
        for i, k in enumerate(counts):
            lp = math.log10(k / s.n) if k else None
            bins.append(HistogramBin(float(edges[i]), float(edges[i + 1]), int(k), lp))
    return CostSummary(s.n, s.n_infinite, mean, var, quantile(c, 0.5), qs, bins)
