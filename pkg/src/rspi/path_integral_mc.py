"""Monte Carlo estimates of the risk-sensitive path integral.

Uncontrolled paths started at ``(t, x)`` are weighted by
``exp(-(phi(X_T) + int V) / lambda_theta)``.  Their mean is ``Z``, the
optimal value is ``-lambda_theta log Z`` and the optimal control is
``lambda_theta (R^T R)^{-1} B^T d/dx log Z``.  The gradient is a central
difference whose two sides are driven by the same noise streams.

All averages of exponentials go through a max-shifted log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .analytic_control import LeqgSpec, leqg_wellposed
from .core_model import ControlProblem, PolicyHandle, RiskParams
from .sde_sim import simulate_endpoints

__all__ = [
    "DegenerateEstimateError",
    "ZEstimate",
    "ControlEstimate",
    "BlowupDiagnostic",
    "log_mean_exp",
    "sample_path_costs",
    "estimate_log_z",
    "estimate_value",
    "estimate_control",
    "default_step",
    "detect_blowup",
    "mc_policy",
]

DIVERGENT_MESSAGE = "suspected divergent path integral"


class DegenerateEstimateError(ArithmeticError):
    """No path carries finite weight, or some path carries infinite weight."""


@dataclass(frozen=True)
class ZEstimate:
    log_z: float
    std_err_log_z: float
    n_samples: int
    effective_sample_size: float


@dataclass(frozen=True)
class ControlEstimate:
    """Finite-difference control estimate with delta-method standard errors."""

    control: np.ndarray
    std_err: np.ndarray
    h: float


def log_mean_exp(exponents) -> ZEstimate:
    """``log mean exp(e_i)`` with its standard error and effective sample size."""
    e = np.asarray(exponents, dtype=float).ravel()
    n = e.size
    if np.any(e == math.inf) or np.any(np.isnan(e)):
        raise DegenerateEstimateError("degenerate estimate: a path has infinite weight")
    m = e.max()
    if m == -math.inf:
        raise DegenerateEstimateError("degenerate estimate: every path has zero weight")
    w = np.exp(e - m)
    sw = w.sum()
    mean_w = sw / n
    se = float(w.std(ddof=1) / (mean_w * math.sqrt(n))) if n > 1 else math.inf
    ess = float(sw * sw / np.sum(w * w))
    return ZEstimate(float(m + math.log(mean_w)), se, n, ess)


def sample_path_costs(problem: ControlProblem, t: float, x, n: int, dt: float, seed: int, workers: int = 1):
    """Costs ``phi(X_T) + int V`` of ``n`` uncontrolled paths from ``(t, x)``."""
    x_end, vint = simulate_endpoints(problem, np.reshape(x, (1, -1)), t, dt, n, seed, workers)
    return problem.end_cost(x_end[0]) + vint[0]


def _exponents(costs, params: RiskParams):
    inv = params.inv_lambda_theta
    with np.errstate(invalid="ignore"):
        e = -inv * np.asarray(costs, dtype=float)
    return e


def _require_regular(params: RiskParams):
    if params.special:
        raise ValueError("path integral is not defined at theta = 1/lambda0")
    if params.lambda_theta is None or not math.isfinite(params.lambda_theta):
        raise ValueError("lambda_theta must be finite")


def estimate_log_z(
    problem: ControlProblem,
    params: RiskParams,
    t: float,
    x,
    n: int,
    dt: float,
    seed: int,
    workers: int = 1,
) -> ZEstimate:
    """Monte Carlo ``log Z_theta(t, x)`` from ``n`` uncontrolled paths."""
    _require_regular(params)
    if n < 2:
        raise ValueError("need n >= 2")
    costs = sample_path_costs(problem, t, x, n, dt, seed, workers)
    return log_mean_exp(_exponents(costs, params))


def estimate_value(
    problem: ControlProblem,
    params: RiskParams,
    t: float,
    x,
    n: int,
    dt: float,
    seed: int,
    workers: int = 1,
) -> float:
    """Optimal value ``-lambda_theta log Z``; the mean uncontrolled cost when ``theta = 1/lambda0``."""
    if n < 2:
        raise ValueError("need n >= 2")
    if params.special:
        return float(np.mean(sample_path_costs(problem, t, x, n, dt, seed, workers)))
    est = estimate_log_z(problem, params, t, x, n, dt, seed, workers)
    return -params.lambda_theta * est.log_z


def default_step(problem: ControlProblem, t: float) -> float:
    """``1e-2 * sigma * sqrt(T - t)`` with ``sigma`` the RMS noise amplitude."""
    s = math.sqrt(np.trace(problem.sigma @ problem.sigma.T) / problem.control_dim)
    return 1e-2 * s * math.sqrt(problem.horizon - t)


def _gain_transpose(problem: ControlProblem, t: float, x: np.ndarray) -> np.ndarray:
    B = problem.gain_at(t, x[None, :])
    if B is None:
        return np.eye(problem.control_dim)
    B = np.asarray(B)
    return (B[0] if B.ndim == 3 else B).T


def estimate_control(
    problem: ControlProblem,
    params: RiskParams,
    t: float,
    x,
    h: Optional[float] = None,
    n: int = 10_000,
    dt: float = 1e-3,
    seed: int = 0,
    workers: int = 1,
) -> ControlEstimate:
    """Optimal control from a central difference of ``log Z`` with common random numbers.

    In the special case the difference is taken of the mean uncontrolled
    cost instead and the control is ``-(R^T R)^{-1} B^T grad J``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = problem.state_dim
    if h is None:
        h = default_step(problem, t)
    if not h > 0:
        raise ValueError("h must be positive")
    if n < 2:
        raise ValueError("need n >= 2")
    if not params.special:
        _require_regular(params)
    starts = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        starts += [x + e, x - e]
    x_end, vint = simulate_endpoints(problem, np.array(starts), t, dt, n, seed, workers)
    costs = np.stack([problem.end_cost(x_end[i]) for i in range(2 * d)]) + vint
    grad = np.empty(d)
    grad_se = np.empty(d)
    for j in range(d):
        cp, cm = costs[2 * j], costs[2 * j + 1]
        if params.special:
            diff = cp - cm
            grad[j] = diff.mean() / (2 * h)
            grad_se[j] = diff.std(ddof=1) / math.sqrt(n) / (2 * h)
        else:
            ep, em = _exponents(cp, params), _exponents(cm, params)
            zp, zm = log_mean_exp(ep), log_mean_exp(em)
            grad[j] = (zp.log_z - zm.log_z) / (2 * h)
            # paired delta method: log Zp - log Zm ~ mean(wp/mean wp - wm/mean wm)
            wp = np.exp(ep - ep.max())
            wm = np.exp(em - em.max())
            a = wp / wp.mean() - wm / wm.mean()
            grad_se[j] = a.std(ddof=1) / math.sqrt(n) / (2 * h)
    M = problem.control_weight @ _gain_transpose(problem, t, x)
    if params.special:
        M = -M
    else:
        M = params.lambda_theta * M
    control = M @ grad
    se = np.sqrt((M**2) @ (grad_se**2))
    return ControlEstimate(control, se, float(h))


def mc_policy(
    problem: ControlProblem,
    params: RiskParams,
    n: int,
    dt: float,
    seed: int,
    h: Optional[float] = None,
) -> PolicyHandle:
    """Feedback law that runs :func:`estimate_control` at every queried state.

    Expensive: meant for spot evaluation, not for driving rollouts.
    """

    def fn(t, xs):
        xs = np.atleast_2d(xs)
        return np.array([estimate_control(problem, params, t, xi, h, n, dt, seed).control for xi in xs])

    return PolicyHandle("mc", fn)


@dataclass(frozen=True)
class BlowupDiagnostic:
    top1_share: float
    max_share_half: float
    max_share_full: float
    empirical_suspected: bool
    analytic_verdict: Optional[str]
    message: str


def detect_blowup(exponents, leqg: Optional[LeqgSpec] = None, t: float = 0.0) -> BlowupDiagnostic:
    """Heavy-tail check on path weights ``exp(e_i)``.

    Flags divergence when the top 1% of weights carry more than 99% of the
    mass.  The largest weight's share in the first half of the sample and
    in the whole sample are reported alongside; for a divergent integral
    the share does not settle as the sample grows.  With ``leqg`` given,
    the exact well-posedness bound for the quadratic end cost is also
    evaluated.
    """
    e = np.asarray(exponents, dtype=float).ravel()
    n = e.size
    if n < 100:
        raise ValueError("need at least 100 samples")
    if np.all(e == -math.inf):
        top1 = half = full = 0.0
        suspected = False
    elif np.any(e == math.inf):
        top1 = half = full = 1.0
        suspected = True
    else:
        w = np.exp(e - e.max())
        total = w.sum()
        k = max(1, int(math.ceil(0.01 * n)))
        top1 = float(np.sort(w)[-k:].sum() / total)
        wh = w[: n // 2]
        half = float(wh.max() / wh.sum()) if wh.sum() > 0 else 0.0
        full = float(w.max() / total)
        suspected = top1 > 0.99
    verdict = None
    if leqg is not None:
        verdict = "convergent" if leqg_wellposed(leqg, t) else "divergent"
    if suspected or verdict == "divergent":
        msg = DIVERGENT_MESSAGE
    else:
        msg = "no divergence detected"
    return BlowupDiagnostic(top1, half, full, suspected, verdict, msg)
