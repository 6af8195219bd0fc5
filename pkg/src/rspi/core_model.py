"""Problem definitions and risk-parameter algebra.

The controlled diffusion is

    dX = b(t, X) dt + B(t, X) (u dt + sigma dW),

with running cost 0.5 * |R u|^2 + V(t, X) and end cost phi(X_T).  The
path-integral machinery requires the noise to be tied to the control
penalty through ``sigma sigma^T = lambda0 (R^T R)^{-1}``.

Callables on a problem are vectorized over a leading sample axis:

- ``drift(t, x)`` takes ``t`` broadcastable to ``(m,)`` and ``x`` of shape
  ``(m, d)`` and returns ``(m, d)``;
- ``path_cost(t, x)`` returns ``(m,)``;
- ``gain`` is a constant ``(d, k)`` matrix or a callable returning
  ``(m, d, k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "RiskParams",
    "Region",
    "Quadratic",
    "Partition",
    "TargetsThreats",
    "SingleRegionFinite",
    "EndCost",
    "ControlProblem",
    "PolicyHandle",
    "make_risk_params",
    "risk_params_from_lambda_theta",
    "check_noise_cost_compatibility",
    "small_theta_reference",
]

COMPAT_RTOL = 1e-10


@dataclass(frozen=True)
class RiskParams:
    """Risk sensitivity together with the derived path-integral temperature.

    ``lambda_theta`` is ``None`` exactly when ``special`` is set, i.e. when
    ``theta == 1 / lambda0`` and the value function is a plain expectation.
    """

    lambda0: float
    theta: float
    lambda_theta: Optional[float]
    special: bool = False

    @property
    def inv_lambda_theta(self) -> float:
        """``1 / lambda_theta``; zero in the special case."""
        if self.special:
            return 0.0
        return 1.0 / self.lambda0 - self.theta

    @property
    def prefactor(self) -> float:
        """``lambda_theta / lambda0``, the scale between theta and risk-neutral controls."""
        if self.special:
            return math.inf
        return self.lambda_theta / self.lambda0


def make_risk_params(lambda0: float, theta: float) -> RiskParams:
    """Build :class:`RiskParams` from the noise-cost ratio and risk sensitivity.

    Raises:
        ValueError: if ``lambda0`` is zero or either input is not finite.
    """
    lambda0 = float(lambda0)
    theta = float(theta)
    if lambda0 == 0.0:
        raise ValueError("lambda0 must be nonzero")
    if not (math.isfinite(lambda0) and math.isfinite(theta)):
        raise ValueError("lambda0 and theta must be finite")
    if theta == 0.0:
        return RiskParams(lambda0, theta, lambda0)
    inv = 1.0 / lambda0 - theta
    if inv == 0.0 or 1.0 - lambda0 * theta == 0.0:
        return RiskParams(lambda0, theta, None, special=True)
    return RiskParams(lambda0, theta, 1.0 / inv)


def risk_params_from_lambda_theta(lambda0: float, lambda_theta: Optional[float]) -> RiskParams:
    """Inverse construction: pick theta so that the temperature equals ``lambda_theta``.

    ``None`` or an infinite ``lambda_theta`` selects the special case
    ``theta = 1 / lambda0``.
    """
    lambda0 = float(lambda0)
    if lambda0 == 0.0:
        raise ValueError("lambda0 must be nonzero")
    if lambda_theta is None or math.isinf(lambda_theta):
        return RiskParams(lambda0, 1.0 / lambda0, None, special=True)
    if lambda_theta == 0.0:
        raise ValueError("lambda_theta must be nonzero")
    if lambda_theta == lambda0:
        return RiskParams(lambda0, 0.0, lambda0)
    theta = 1.0 / lambda0 - 1.0 / lambda_theta
    return RiskParams(lambda0, theta, float(lambda_theta))


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def check_noise_cost_compatibility(sigma, R, lambda0: float) -> bool:
    """True iff ``sigma sigma^T == lambda0 (R^T R)^{-1}`` elementwise to 1e-10 relative."""
    s = _as_matrix(sigma)
    r = _as_matrix(R)
    if s.shape != r.shape:
        return False
    lhs = s @ s.T
    rhs = lambda0 * np.linalg.inv(r.T @ r)
    scale = np.maximum(np.abs(lhs), np.abs(rhs)).max()
    return bool(np.all(np.abs(lhs - rhs) <= COMPAT_RTOL * scale))


def small_theta_reference(mean: float, variance: float, theta: float) -> float:
    """Second-order value ``mean + theta/2 * variance``; used as a test oracle."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    return mean + 0.5 * theta * variance


# --- end costs -------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Half-open interval ``[lower, upper)`` carrying an end-cost level.

    Negative cost marks a target, positive cost a threat.  Infinite bounds
    are allowed.
    """

    lower: float
    upper: float
    cost: float = 0.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"region needs lower < upper, got [{self.lower}, {self.upper})")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.lower) & (x < self.upper)


def _first_coord(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim >= 2:
        return x[..., 0]
    return x


def _region_lookup(regions: Sequence[Region], x, fill: float) -> np.ndarray:
    x1 = _first_coord(x)
    out = np.full(x1.shape, fill, dtype=float)
    for reg in regions:
        out[reg.contains(x1)] = reg.cost
    return out


@dataclass(frozen=True)
class Quadratic:
    """``phi(x) = alpha^2 / 2 * |x - mu|^2``."""

    alpha: float
    mu: float = 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        diff = x - self.mu
        sq = diff**2 if x.ndim < 2 else np.sum(diff**2, axis=-1)
        return 0.5 * self.alpha**2 * sq


@dataclass(frozen=True)
class Partition:
    """Piecewise-constant end cost over ordered intervals covering the line."""

    regions: tuple

    def __post_init__(self):
        regs = tuple(self.regions)
        object.__setattr__(self, "regions", regs)
        if not regs:
            raise ValueError("partition needs at least one region")
        if regs[0].lower != -math.inf or regs[-1].upper != math.inf:
            raise ValueError("partition must cover the whole line")
        for a, b in zip(regs, regs[1:]):
            if a.upper != b.lower:
                raise ValueError(f"partition regions must be ordered and adjacent: {a} / {b}")

    @classmethod
    def constant(cls, c: float) -> "Partition":
        return cls((Region(-math.inf, math.inf, c),))

    def __call__(self, x) -> np.ndarray:
        return _region_lookup(self.regions, x, math.nan)


@dataclass(frozen=True)
class TargetsThreats:
    """Bounded, disjoint regions over a zero-cost background."""

    regions: tuple

    def __post_init__(self):
        regs = tuple(sorted(self.regions, key=lambda r: r.lower))
        object.__setattr__(self, "regions", regs)
        for r in regs:
            if not r.bounded:
                raise ValueError(f"targets/threats regions must be bounded: {r}")
        for a, b in zip(regs, regs[1:]):
            if a.upper > b.lower:
                raise ValueError(f"regions overlap: {a} / {b}")

    def __call__(self, x) -> np.ndarray:
        return _region_lookup(self.regions, x, 0.0)

    def as_partition(self) -> Partition:
        """Same end cost with the background split into explicit zero-cost intervals."""
        out = []
        edge = -math.inf
        for r in self.regions:
            if r.lower > edge:
                out.append(Region(edge, r.lower, 0.0))
            out.append(r)
            edge = r.upper
        out.append(Region(edge, math.inf, 0.0))
        return Partition(tuple(out))


@dataclass(frozen=True)
class SingleRegionFinite:
    """Cost ``region.cost`` inside ``region``, ``+inf`` outside."""

    region: Region

    def __call__(self, x) -> np.ndarray:
        return _region_lookup((self.region,), x, math.inf)


EndCost = Union[Quadratic, Partition, TargetsThreats, SingleRegionFinite]


# --- problem ---------------------------------------------------------------


@dataclass(frozen=True)
class ControlProblem:
    """Controlled diffusion with quadratic control cost.

    ``sigma`` and ``R`` are promoted to ``(k, k)`` matrices.  ``lambda0``
    defaults to ``sigma^2 R^2`` in the scalar case.  Set ``validate=False``
    only for degenerate test setups such as ``sigma = 0``.
    """

    sigma: np.ndarray
    R: np.ndarray
    end_cost: EndCost
    horizon: float
    lambda0: Optional[float] = None
    drift: Optional[Callable] = None
    gain: Union[np.ndarray, Callable, None] = None
    path_cost: Optional[Callable] = None
    state_dim: Optional[int] = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        sigma = _as_matrix(self.sigma)
        R = _as_matrix(self.R)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "R", R)
        if sigma.shape != R.shape:
            raise ValueError("sigma and R must have the same shape")
        k = sigma.shape[0]
        lambda0 = self.lambda0
        if lambda0 is None:
            if k != 1:
                raise ValueError("lambda0 must be given for multi-dimensional noise")
            lambda0 = float(sigma[0, 0] ** 2 * R[0, 0] ** 2)
            object.__setattr__(self, "lambda0", lambda0)
        if self.gain is None or callable(self.gain):
            d = self.state_dim if self.state_dim is not None else k
        else:
            g = np.asarray(self.gain, dtype=float).reshape(-1, k)
            object.__setattr__(self, "gain", g)
            d = g.shape[0]
            if self.state_dim is not None and self.state_dim != d:
                raise ValueError("state_dim disagrees with gain shape")
            if np.linalg.matrix_rank(g) < k:
                raise ValueError("gain B must have full column rank")
        object.__setattr__(self, "state_dim", d)
        if d < k:
            raise ValueError("state dimension must be at least the control dimension")
        if self.gain is None and d != k:
            raise ValueError("identity gain requires state_dim == control_dim")
        if self.validate:
            if np.linalg.matrix_rank(sigma) < k or np.linalg.matrix_rank(R) < k:
                raise ValueError("sigma and R must be full rank")
            if not check_noise_cost_compatibility(sigma, R, lambda0):
                raise ValueError(
                    "noise and control cost are incompatible: sigma sigma^T != lambda0 (R^T R)^-1"
                )

    @classmethod
    def one_dim(cls, sigma: float, R: float, end_cost: EndCost, horizon: float, **kw) -> "ControlProblem":
        """Scalar problem with ``B = 1`` and ``lambda0 = sigma^2 R^2``."""
        return cls(sigma=sigma, R=R, end_cost=end_cost, horizon=horizon, **kw)

    @property
    def control_dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def control_weight(self) -> np.ndarray:
        """``(R^T R)^{-1}``."""
        return np.linalg.inv(self.R.T @ self.R)

    def gain_at(self, t, x) -> Optional[np.ndarray]:
        """``B`` at the given points, ``None`` meaning identity."""
        if self.gain is None:
            return None
        if callable(self.gain):
            return np.asarray(self.gain(t, x), dtype=float)
        return self.gain


@dataclass(frozen=True)
class PolicyHandle:
    """State-feedback law ``u(t, x)`` vectorized over rows of ``x``.

    ``fn`` receives a scalar time and states of shape ``(m, d)`` and
    returns controls of shape ``(m, k)``.
    """

    kind: str
    fn: Callable[[float, np.ndarray], np.ndarray]

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.fn(t, x)

    @classmethod
    def zero(cls, control_dim: int = 1) -> "PolicyHandle":
        def fn(t, x):
            return np.zeros((np.shape(x)[0], control_dim))

        return cls("zero", fn)
