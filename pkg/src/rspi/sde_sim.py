"""Euler-Maruyama simulation of the controlled diffusion.

One step of the explicit scheme, with the control evaluated at the left
end point, is

    X[j+1] = X[j] + b(t_j, X[j]) h_j + B (u(t_j, X[j]) h_j + sigma dW_j),

where ``dW_j ~ N(0, h_j I)``.  The grid runs from ``t0`` to the horizon in
steps of ``dt`` and the final step is shortened so that it ends exactly on
the horizon.

Sample ``i`` of any batch draws its noise from stream ``i`` of the batch
seed, so batches are reproducible independently of how they are chunked.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core_model import ControlProblem, PolicyHandle
from .rng import RngStream, standard_normals, stream_keys

__all__ = [
    "SimulationError",
    "CostParts",
    "Trajectory",
    "time_grid",
    "rollout",
    "batch_rollout",
    "trajectory_cost",
    "replay_states",
    "simulate_endpoints",
    "write_trajectory_csv",
]


class SimulationError(FloatingPointError):
    """A state became non-finite during integration."""

    def __init__(self, step: int, sample: Optional[int] = None, detail: str = ""):
        self.step = step
        self.sample = sample
        where = f"step {step}" if sample is None else f"step {step} of sample {sample}"
        super().__init__(f"non-finite state at {where}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class CostParts:
    control_cost: float
    path_cost: float
    end_cost: float

    @property
    def total(self) -> float:
        return self.control_cost + self.path_cost + self.end_cost


@dataclass(frozen=True)
class Trajectory:
    """A single simulated path.

    ``states`` has one row per grid time; ``controls`` and
    ``noise_increments`` (``sigma dW``) have one row per step.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    noise_increments: np.ndarray
    cost_parts: CostParts

    @property
    def total_cost(self) -> float:
        return self.cost_parts.total


def time_grid(t0: float, horizon: float, dt: float) -> np.ndarray:
    """Uniform grid from ``t0`` to ``horizon``; the last step may be shorter."""
    span = horizon - t0
    if not (dt > 0 and dt <= span * (1 + 1e-12)):
        raise ValueError(f"need 0 < dt <= T - t0, got dt={dt}, T - t0={span}")
    n = max(1, int(math.ceil(span / dt - 1e-9)))
    times = t0 + dt * np.arange(n + 1, dtype=float)
    times[-1] = horizon
    return times


def _matvec(M: Optional[np.ndarray], v: np.ndarray) -> np.ndarray:
    """Row-wise ``M @ v`` with a fixed summation order; ``None`` is the identity."""
    if M is None:
        return v
    if M.ndim == 2:
        out = M[None, :, 0] * v[:, 0:1]
        for b in range(1, M.shape[1]):
            out = out + M[None, :, b] * v[:, b : b + 1]
        return out
    out = M[:, :, 0] * v[:, 0:1]
    for b in range(1, M.shape[2]):
        out = out + M[:, :, b] * v[:, b : b + 1]
    return out


def _step(problem: ControlProblem, t: float, h: float, x: np.ndarray, u, noise: np.ndarray) -> np.ndarray:
    incr = noise if u is None else u * h + noise
    dx = _matvec(problem.gain_at(t, x), incr)
    if problem.drift is not None:
        return x + np.asarray(problem.drift(t, x), dtype=float) * h + dx
    return x + dx


def _noise(problem: ControlProblem, seed: int, keys: np.ndarray, step: int, h: float) -> np.ndarray:
    k = problem.control_dim
    sq = math.sqrt(h)
    dw = np.empty((keys.shape[0], k))
    for c in range(k):
        dw[:, c] = standard_normals(seed, keys, step * k + c) * sq
    sigma = problem.sigma
    if k == 1:
        return sigma[0, 0] * dw
    return _matvec(sigma, dw)


def _check_finite(x: np.ndarray, step: int, streams: np.ndarray) -> None:
    if not np.isfinite(x).all():
        bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
        raise SimulationError(step, int(streams[bad % len(streams)]))


def _cost_parts(problem: ControlProblem, times: np.ndarray, states: np.ndarray, controls: np.ndarray) -> CostParts:
    h = np.diff(times)
    ru = controls @ problem.R.T
    control_cost = float(np.sum(0.5 * np.sum(ru * ru, axis=1) * h))
    if problem.path_cost is None:
        path_cost = 0.0
    else:
        v = np.asarray(problem.path_cost(times[:-1], states[:-1]), dtype=float)
        path_cost = float(np.sum(v * h))
    end_cost = float(problem.end_cost(states[-1:])[0])
    return CostParts(control_cost, path_cost, end_cost)


def _simulate_recorded(problem, policy, x0, t0, dt, seed, streams) -> List[Trajectory]:
    times = time_grid(t0, problem.horizon, dt)
    d, k = problem.state_dim, problem.control_dim
    n = len(streams)
    nsteps = len(times) - 1
    keys = stream_keys(seed, streams)
    states = np.empty((nsteps + 1, n, d))
    controls = np.zeros((nsteps, n, k))
    noises = np.empty((nsteps, n, k))
    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(1, d), (n, d)).copy()
    states[0] = x
    for j in range(nsteps):
        t = times[j]
        h = times[j + 1] - t
        u = None
        if policy is not None:
            u = np.asarray(policy(t, x), dtype=float).reshape(n, k)
            controls[j] = u
        noise = _noise(problem, seed, keys, j, h)
        noises[j] = noise
        x = _step(problem, t, h, x, u, noise)
        _check_finite(x, j, streams)
        states[j + 1] = x
    out = []
    for i in range(n):
        st = np.ascontiguousarray(states[:, i, :])
        ctl = np.ascontiguousarray(controls[:, i, :])
        out.append(
            Trajectory(
                times=times,
                states=st,
                controls=ctl,
                noise_increments=np.ascontiguousarray(noises[:, i, :]),
                cost_parts=_cost_parts(problem, times, st, ctl),
            )
        )
    return out


def rollout(
    problem: ControlProblem,
    policy: Optional[PolicyHandle],
    x0,
    t0: float,
    dt: float,
    rng: RngStream,
) -> Trajectory:
    """Simulate one path driven by ``rng``; ``policy=None`` means zero control."""
    return _simulate_recorded(problem, policy, x0, t0, dt, rng.seed, np.array([rng.stream_index]))[0]


def _chunks(n: int, workers: int) -> List[np.ndarray]:
    workers = max(1, min(int(workers), n))
    return [c for c in np.array_split(np.arange(n, dtype=np.int64), workers) if len(c)]


def batch_rollout(
    problem: ControlProblem,
    policy: Optional[PolicyHandle],
    x0,
    t0: float,
    dt: float,
    n: int,
    seed: int,
    workers: int = 1,
) -> List[Trajectory]:
    """Simulate ``n`` paths; sample ``i`` uses stream ``i`` of ``seed``.

    The result does not depend on ``workers``.  A :class:`SimulationError`
    carries the index of the failing sample.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    chunks = _chunks(n, workers)
    if len(chunks) == 1:
        return _simulate_recorded(problem, policy, x0, t0, dt, seed, chunks[0])
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda c: _simulate_recorded(problem, policy, x0, t0, dt, seed, c), chunks))
    return [traj for part in parts for traj in part]


def trajectory_cost(traj: Trajectory, problem: ControlProblem) -> float:
    """End cost plus integrated running cost; ``inf`` if the end cost is infinite."""
    return _cost_parts(problem, traj.times, traj.states, traj.controls).total


def replay_states(traj: Trajectory, problem: ControlProblem) -> np.ndarray:
    """Rebuild the states from the stored controls and noise increments."""
    times = traj.times
    x = traj.states[:1].copy()
    out = [x[0]]
    for j in range(len(times) - 1):
        t = times[j]
        h = times[j + 1] - t
        x = _step(problem, t, h, x, traj.controls[j : j + 1], traj.noise_increments[j : j + 1])
        out.append(x[0])
    return np.array(out)


def _endpoints_chunk(problem, starts, t0, dt, seed, streams):
    times = time_grid(t0, problem.horizon, dt)
    m, d = starts.shape
    n = len(streams)
    keys = stream_keys(seed, streams)
    x = np.repeat(starts, n, axis=0)
    acc = np.zeros(m * n) if problem.path_cost is not None else None
    for j in range(len(times) - 1):
        t = times[j]
        h = times[j + 1] - t
        if acc is not None:
            acc += np.asarray(problem.path_cost(t, x), dtype=float) * h
        noise = _noise(problem, seed, keys, j, h)
        if m > 1:
            noise = np.tile(noise, (m, 1))
        x = _step(problem, t, h, x, None, noise)
        _check_finite(x, j, streams)
    integral = acc.reshape(m, n) if acc is not None else np.zeros((m, n))
    return x.reshape(m, n, d), integral


def simulate_endpoints(
    problem: ControlProblem,
    starts,
    t0: float,
    dt: float,
    n: int,
    seed: int,
    workers: int = 1,
):
    """Uncontrolled end states and integrated path costs for several start points.

    Every start point is driven by the same ``n`` streams (common random
    numbers).  Returns ``(x_end, path_integral)`` with shapes ``(m, n, d)``
    and ``(m, n)``.  Each path equals :func:`rollout` under zero control on
    the same stream.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape[1] != problem.state_dim:
        starts = starts.reshape(-1, problem.state_dim)
    chunks = _chunks(n, workers)
    if len(chunks) == 1:
        return _endpoints_chunk(problem, starts, t0, dt, seed, chunks[0])
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda c: _endpoints_chunk(problem, starts, t0, dt, seed, c), chunks))
    return (
        np.concatenate([p[0] for p in parts], axis=1),
        np.concatenate([p[1] for p in parts], axis=1),
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Dump ``t, x_1..x_d, u_1..u_k``; the final row has empty controls."""
    d = traj.states.shape[1]
    k = traj.controls.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)] + [f"u_{i + 1}" for i in range(k)])
        for j, t in enumerate(traj.times):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in traj.states[j]]
            if j < len(traj.controls):
                row += [f"{v:.17g}" for v in traj.controls[j]]
            else:
                row += [""] * k
            w.writerow(row)
