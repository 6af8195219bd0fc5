"""Closed-form controls for the one-dimensional problem with ``b = 0, V = 0``.

Everything here works with the Gaussian transition of the uncontrolled
process, ``X_T ~ N(x, sigma^2 (T - t))``:

- LEQG: quadratic end cost, linear feedback with a well-posedness bound;
- hit probabilities ``l(t, x | S)`` of intervals and the risk-neutral
  control that steers into a single interval;
- mixtures of those controls for piecewise-constant end costs, both as a
  full partition of the line and as targets/threats over a zero-cost
  background;
- the two-point-target limit and its symmetry-breaking time.

Probabilities are handled in the log domain so that the controls stay
finite far from the regions, where ``l`` itself underflows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import erfc, log_ndtr

from .core_model import (
    EndCost,
    Partition,
    PolicyHandle,
    Quadratic,
    Region,
    RiskParams,
    SingleRegionFinite,
    TargetsThreats,
)

__all__ = [
    "LeqgSpec",
    "MixtureWeights",
    "PartitionError",
    "ControlSaturationWarning",
    "norm_cdf",
    "log_interval_probability",
    "leqg_wellposed",
    "leqg_control",
    "leqg_policy",
    "hit_probability",
    "hit_probability_derivative",
    "single_region_control",
    "partition_log_z",
    "mixture_control",
    "mixture_policy",
    "delta_two_target_control",
    "symmetry_breaking_time",
    "find_zero_crossings",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class PartitionError(ArithmeticError):
    """The partition function is not a positive finite number."""


class ControlSaturationWarning(RuntimeWarning):
    """Hit probability underflowed; an asymptotic control was returned."""


# --- Gaussian helpers --------------------------------------------------------


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def norm_cdf(z):
    """Standard normal CDF via ``erfc``, accurate in the lower tail."""
    return 0.5 * erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def _log_pdf(z):
    return -0.5 * np.square(z) - _LOG_SQRT_2PI


def log_interval_probability(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b`` without cancellation.

    Narrow intervals are integrated directly with a fixed Gauss-Legendre
    rule around the midpoint.  Other intervals with a positive midpoint are
    reflected to the lower tail, where ``log_ndtr`` is accurate.  Mirror
    images ``(a, b)`` and ``(-b, -a)`` go through identical arithmetic.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    with np.errstate(invalid="ignore"):
        flip = a + b > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.array(log_hi + np.log(-np.expm1(log_lo - log_hi)))
        m = 0.5 * (a + b)
        d = 0.5 * (b - a)
        narrow = np.isfinite(d) & (d <= 0.5) & (np.abs(m) * d <= 2.0)
    if np.any(narrow):
        # the integral is even in the midpoint
        mn, dn = np.abs(m[narrow]), d[narrow]
        # int_{-d}^{d} exp(-m u - u^2 / 2) du; node-by-node sum keeps results batch-independent
        acc = np.zeros_like(mn)
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            u = dn * node
            acc = acc + weight * np.exp(-mn * u - 0.5 * u * u)
        out[narrow] = _log_pdf(mn) + np.log(dn * acc)
    return out[()]


def _z(x, edge, scale):
    # keeps +-inf edges infinite for any finite x
    return (edge - x) / scale


def _scale(t, sigma, T):
    tau = T - t
    if not tau > 0:
        raise ValueError(f"need t < T, got t={t}, T={T}")
    return sigma * math.sqrt(tau)


def _log_hit(x, region: Region, s):
    return log_interval_probability(_z(x, region.lower, s), _z(x, region.upper, s))


def _dl(x, region: Region, s):
    """``d l / d x`` as a difference of edge densities."""
    za = _z(x, region.lower, s)
    zb = _z(x, region.upper, s)
    return (np.exp(_log_pdf(za)) - np.exp(_log_pdf(zb))) / s


def _score(x, region: Region, s):
    """``(d l / d x) / l`` in the log domain, with the Mills-ratio asymptote on underflow."""
    x = np.asarray(x, dtype=float)
    logl = _log_hit(x, region, s)
    za = _z(x, region.lower, s)
    zb = _z(x, region.upper, s)
    with np.errstate(over="ignore", invalid="ignore"):
        score = (np.exp(_log_pdf(za) - logl) - np.exp(_log_pdf(zb) - logl)) / s
    bad = ~np.isfinite(score)
    if np.any(bad):
        warnings.warn(
            "hit probability underflow; returning saturated control", ControlSaturationWarning, stacklevel=3
        )
        # far below the region the ratio behaves like z_lower / s, far above like z_upper / s
        below = np.broadcast_to(x < region.lower, score.shape)
        asym = np.where(below, za, zb) / s
        score = np.where(bad, asym, score)
    return score


# --- LEQG ----------------------------------------------------------------------


@dataclass(frozen=True)
class LeqgSpec:
    """Scalar LEQG problem with end cost ``alpha^2 / 2 (x - mu)^2``."""

    alpha: float
    mu: float
    R: float
    sigma: float
    theta: float
    T: float

    def __post_init__(self):
        if not (self.R > 0 and self.sigma > 0 and self.alpha >= 0):
            raise ValueError("LEQG needs R > 0, sigma > 0, alpha >= 0")

    @property
    def lambda0(self) -> float:
        return self.sigma**2 * self.R**2

    def theta_threshold(self, t: float) -> float:
        tau = self.T - t
        first = math.inf if self.alpha == 0 else 1.0 / (self.alpha**2 * self.sigma**2 * tau)
        return first + 1.0 / (self.sigma**2 * self.R**2)


def leqg_wellposed(spec: LeqgSpec, t: float) -> bool:
    """Whether the path integral is finite: ``theta`` strictly below the threshold."""
    if not t < spec.T:
        raise ValueError("need t < T")
    return spec.theta < spec.theta_threshold(t)


def leqg_control(spec: LeqgSpec, t: float, x):
    """Closed-form LEQG feedback ``alpha^2 (mu - x) / (R^2 + tau alpha^2 (1 - sigma^2 R^2 theta))``."""
    if not leqg_wellposed(spec, t):
        raise ValueError(
            f"LEQG problem is ill-posed at t={t}: theta={spec.theta} >= {spec.theta_threshold(t)}"
        )
    tau = spec.T - t
    a2 = spec.alpha**2
    denom = spec.R**2 + tau * a2 * (1.0 - spec.sigma**2 * spec.R**2 * spec.theta)
    if denom == 0:
        raise ValueError("LEQG control denominator vanishes")
    return a2 * (spec.mu - np.asarray(x, dtype=float)) / denom


def leqg_policy(spec: LeqgSpec) -> PolicyHandle:
    def fn(t, x):
        return leqg_control(spec, t, np.asarray(x)[:, :1])

    return PolicyHandle("leqg", fn)


# --- single regions ------------------------------------------------------------


def hit_probability(t: float, x, S: Region, sigma: float, T: float):
    """Probability that the uncontrolled diffusion from ``(t, x)`` ends in ``S``."""
    return np.exp(_log_hit(np.asarray(x, dtype=float), S, _scale(t, sigma, T)))


def hit_probability_derivative(t: float, x, S: Region, sigma: float, T: float):
    return _dl(np.asarray(x, dtype=float), S, _scale(t, sigma, T))


def single_region_control(t: float, x, S: Region, sigma: float, T: float, lambda0: float, R: float):
    """Risk-neutral control toward ``S``: ``lambda0 / R^2 * (d l / d x) / l``.

    The cost level of ``S`` plays no role.
    """
    return lambda0 / R**2 * _score(np.asarray(x, dtype=float), S, _scale(t, sigma, T))


# --- piecewise-constant end costs ---------------------------------------------


@dataclass(frozen=True)
class MixtureWeights:
    """Per-region weights of a mixture control.

    For a partition the weights are a probability vector.  In the
    targets/threats form they may be negative and need not sum to one.
    In the special case (``prefactor`` infinite) the weights are the plain
    hit probabilities.
    """

    weights: np.ndarray
    prefactor: float
    regions: Tuple[Region, ...]
    form: str
    # sum of the absolute control summands, the scale of rounding errors in the control
    scale: Optional[np.ndarray] = None


def _check_params(params: RiskParams):
    if params.special:
        raise ValueError("partition function undefined at theta = 1/lambda0; use the expected-cost branch")


def _log_abs_expm1(y: float) -> Tuple[float, float]:
    """``(log|e^y - 1|, sign(e^y - 1))``."""
    if y == 0:
        return -math.inf, 0.0
    if y > 0:
        return y + math.log(-math.expm1(-y)), 1.0
    return math.log(-math.expm1(y)), -1.0


def _partition_terms(x, regions, params, s):
    """``log(exp(-c_i / lambda) l_i)`` per region, stacked on axis 0."""
    inv = params.inv_lambda_theta
    rows = []
    for r in regions:
        if math.isinf(r.cost):
            if r.cost * inv > 0:
                rows.append(np.full(np.shape(x), -math.inf))
                continue
            raise PartitionError("infinite cost with negative temperature gives an infinite partition function")
        rows.append(-r.cost * inv + _log_hit(x, r, s))
    return np.stack(rows)


def _logsumexp0(terms):
    m = np.max(terms, axis=0)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.sum(np.exp(terms - m), axis=0))


def _signed_targets_terms(x, regions, params, s):
    """Signed log-terms of ``1 + sum (e^{-c/lambda} - 1) l_i``; returns ``(log Z, logs, signs)``."""
    inv = params.inv_lambda_theta
    logs, signs = [], []
    for r in regions:
        lb, sb = _log_abs_expm1(-r.cost * inv)
        logs.append(lb + _log_hit(x, r, s))
        signs.append(sb)
    logs = np.stack(logs) if logs else np.empty((0,) + np.shape(x))
    signs = np.asarray(signs).reshape((-1,) + (1,) * np.ndim(x))
    m = np.maximum(0.0, np.max(logs, axis=0)) if len(logs) else np.zeros(np.shape(x))
    total = np.exp(-m) + np.sum(signs * np.exp(logs - m), axis=0)
    if np.any(total <= 0):
        raise PartitionError("partition function non-positive")
    return m + np.log(total), logs, signs


def partition_log_z(t: float, x, end_cost: EndCost, params: RiskParams, sigma: float, T: float):
    """``log Z_theta(t, x)`` for ``b = 0, V = 0`` and the given end cost."""
    _check_params(params)
    x = np.asarray(x, dtype=float)
    s = _scale(t, sigma, T)
    inv = params.inv_lambda_theta
    if isinstance(end_cost, Partition):
        costs = {r.cost for r in end_cost.regions}
        if len(costs) == 1 and math.isfinite(next(iter(costs))):
            # constant end cost: the hit probabilities sum to one
            return np.full(x.shape, -next(iter(costs)) * inv)
        return _logsumexp0(_partition_terms(x, end_cost.regions, params, s))
    if isinstance(end_cost, TargetsThreats):
        return _signed_targets_terms(x, end_cost.regions, params, s)[0]
    if isinstance(end_cost, SingleRegionFinite):
        if inv < 0:
            raise PartitionError("infinite end cost with negative temperature: partition function diverges")
        return -end_cost.region.cost * inv + _log_hit(x, end_cost.region, s)
    if isinstance(end_cost, Quadratic):
        a = end_cost.alpha**2 * inv
        q = 1.0 + a * s * s
        if not q > 0:
            raise PartitionError("quadratic path integral diverges (well-posedness bound violated)")
        return -0.5 * math.log(q) - 0.5 * a * (x - end_cost.mu) ** 2 / q
    raise TypeError(f"unsupported end cost {type(end_cost).__name__}")


def _special_control(x, regions, s, R):
    grad = np.zeros(np.shape(x))
    for r in regions:
        if r.cost != 0:
            grad = grad + r.cost * _dl(x, r, s)
    return -grad / R**2


def mixture_control(
    t: float,
    x,
    end_cost: EndCost,
    params: RiskParams,
    sigma: float,
    T: float,
    lambda0: float,
    R: float,
    form: str = "auto",
):
    """Optimal control for a piecewise-constant end cost.

    The control is ``lambda_theta / lambda0 * sum_i w_i u0_i`` with ``u0_i``
    the single-region risk-neutral controls.  ``form`` selects how a
    :class:`TargetsThreats` cost is evaluated: ``"targets"`` (default) uses
    the zero-background weights, ``"partition"`` splits the background into
    explicit zero-cost intervals.  In the special case ``theta = 1/lambda0``
    the control is ``-(R^T R)^{-1} d/dx sum_i c_i l_i``.

    Returns ``(control, MixtureWeights)``.
    """
    x = np.asarray(x, dtype=float)
    s = _scale(t, sigma, T)
    if isinstance(end_cost, Quadratic):
        raise TypeError("quadratic end cost: use leqg_control")
    if form not in ("auto", "targets", "partition"):
        raise ValueError(f"unknown form {form!r}")
    if isinstance(end_cost, TargetsThreats) and form == "partition":
        end_cost = end_cost.as_partition()
    if isinstance(end_cost, SingleRegionFinite):
        if params.special or params.inv_lambda_theta < 0:
            raise PartitionError("infinite end cost: value function is infinite for this theta")
        u0 = single_region_control(t, x, end_cost.region, sigma, T, lambda0, R)
        u = params.prefactor * u0
        w = MixtureWeights(np.ones((1,) + x.shape), params.prefactor, (end_cost.region,), "single", np.abs(u))
        return u, w
    regions = end_cost.regions
    if params.special:
        if any(math.isinf(r.cost) for r in regions):
            raise PartitionError("infinite end cost: expected cost is infinite")
        u = _special_control(x, regions, s, R)
        l = np.stack([np.exp(_log_hit(x, r, s)) for r in regions])
        scale = sum(abs(r.cost) * np.abs(_dl(x, r, s)) for r in regions) / R**2
        return u, MixtureWeights(l, math.inf, regions, "special", scale)
    u0 = np.stack([single_region_control(t, x, r, sigma, T, lambda0, R) for r in regions])
    if isinstance(end_cost, TargetsThreats):
        log_z, logs, signs = _signed_targets_terms(x, regions, params, s)
        w = signs * np.exp(logs - log_z)
        kind = "targets"
    else:
        terms = _partition_terms(x, regions, params, s)
        w = np.exp(terms - _logsumexp0(terms))
        kind = "partition"
    u = params.prefactor * np.sum(w * u0, axis=0)
    scale = abs(params.prefactor) * np.sum(np.abs(w * u0), axis=0)
    return u, MixtureWeights(w, params.prefactor, regions, kind, scale)


def mixture_policy(
    end_cost: EndCost, params: RiskParams, sigma: float, T: float, lambda0: float, R: float
) -> PolicyHandle:
    """State feedback from :func:`mixture_control`, re-evaluated at every call."""

    def fn(t, x):
        u, _ = mixture_control(t, np.asarray(x)[:, 0], end_cost, params, sigma, T, lambda0, R)
        return u[:, None]

    return PolicyHandle("mixture", fn)


# --- two point targets ---------------------------------------------------------


def delta_two_target_control(t: float, x, params: RiskParams, sigma: float, T: float, lambda0: float):
    """Control for point targets at -1 and +1 in the strong-reward limit."""
    _check_params(params)
    tau = T - t
    if not tau > 0:
        raise ValueError("need t < T")
    x = np.asarray(x, dtype=float)
    return params.lambda_theta / (lambda0 * tau) * (np.tanh(x / (sigma**2 * tau)) - x)


def symmetry_breaking_time(sigma: float) -> float:
    """Time-to-go ``1 / sigma^2`` below which the two-target control bifurcates."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return 1.0 / sigma**2


def find_zero_crossings(
    f: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    step: float = 1e-3,
    tol: float = 1e-13,
) -> List[float]:
    """Roots of a vectorized ``f`` on ``[lo, hi]``: sign changes on a grid, refined by bisection."""
    n = int(round((hi - lo) / step))
    xs = lo + step * np.arange(n + 1)
    xs[-1] = hi
    vals = np.asarray(f(xs), dtype=float)
    roots = []
    for i in range(len(xs)):
        if vals[i] == 0:
            roots.append(float(xs[i]))
        elif i + 1 < len(xs) and vals[i] * vals[i + 1] < 0:
            a, b, fa = xs[i], xs[i + 1], vals[i]
            while b - a > tol:
                mid = 0.5 * (a + b)
                fm = float(np.asarray(f(np.array([mid])))[0])
                if fm == 0:
                    a = b = mid
                    break
                if (fm < 0) == (fa < 0):
                    a, fa = mid, fm
                else:
                    b = mid
            roots.append(float(0.5 * (a + b)))
    return roots
