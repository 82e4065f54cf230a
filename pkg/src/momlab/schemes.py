"""Discrete fixed-momentum iterations and their baselines.

All runners take an :class:`~momlab.objective.ObjectiveSpec`, a start point
and a step count, and return a :class:`DiscreteTrajectory` with
``n_steps + 1`` points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objective import ObjectiveSpec

DIVERGENCE_THRESHOLD = 1e12


class DivergenceError(ArithmeticError):
    """An iterate became non-finite or exceeded the divergence threshold."""

    def __init__(self, step: int, points=None, velocities=None):
        super().__init__(f"iteration diverged at step {step}")
        self.step = step
        self.points = points
        self.velocities = velocities


@dataclass(frozen=True)
class MomentumParams:
    lam: float
    a: float
    h: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.a < 0:
            raise ValueError(f"a must be nonnegative, got {self.a}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")

    @property
    def lambda_bar(self) -> float:
        return 1.0 / (1.0 - self.lam)

    @property
    def alpha(self) -> float:
        return 0.5 * (1.0 + self.lam - 2.0 * self.a * (1.0 - self.lam))

    @classmethod
    def hb(cls, lam: float, h: float) -> "MomentumParams":
        return cls(lam, 0.0, h)

    @classmethod
    def nag(cls, lam: float, h: float) -> "MomentumParams":
        return cls(lam, lam, h)


@dataclass
class DiscreteTrajectory:
    """Iterates u_0..u_N, optionally with velocities v_0..v_N, at step h."""

    h: float
    points: np.ndarray
    velocities: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ValueError("points must be a non-empty (N+1, d) array")
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float)
            if self.velocities.shape != self.points.shape:
                raise ValueError("velocities must have the same shape as points")

    @property
    def n_steps(self) -> int:
        return len(self.points) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.points)) * self.h

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self.times, self.points, self.velocities)


def write_trajectory_csv(path, times, points, velocities=None) -> None:
    """Header ``n,t,u_0..u_{d-1}[,v_0..v_{d-1}]``, 17 significant digits."""
    points = np.atleast_2d(points)
    d = points.shape[1]
    header = ["n", "t"] + [f"u_{i}" for i in range(d)]
    if velocities is not None:
        header += [f"v_{i}" for i in range(d)]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n, t in enumerate(times):
            row = [str(n), f"{t:.17g}"] + [f"{x:.17g}" for x in points[n]]
            if velocities is not None:
                row += [f"{x:.17g}" for x in velocities[n]]
            w.writerow(row)


def _as_vector(u0, d: int | None = None) -> np.ndarray:
    u = np.array(u0, dtype=float).reshape(-1)
    if d is not None and u.size != d:
        raise ValueError(f"expected a vector of length {d}, got {u.size}")
    return u


def _check(step: int, x: np.ndarray, pts, vel=None) -> None:
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_THRESHOLD:
        raise DivergenceError(step, pts[:step + 1], None if vel is None else vel[:step + 1])


def _two_form(obj: ObjectiveSpec, lam: float, a: float, h: float, u0, v0, n_steps: int):
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    u = _as_vector(u0, obj.dimension)
    v = np.zeros_like(u) if v0 is None else _as_vector(v0, obj.dimension)
    pts = np.empty((n_steps + 1, u.size))
    vel = np.empty_like(pts)
    pts[0], vel[0] = u, v
    for n in range(n_steps):
        force = -obj.grad(u + h * a * v)
        u = u + h * lam * v + h * force
        v = lam * v + force
        pts[n + 1], vel[n + 1] = u, v
        _check(n + 1, u, pts, vel)
        _check(n + 1, v, pts, vel)
    return pts, vel


def run_general(obj: ObjectiveSpec, params: MomentumParams, u0, n_steps: int) -> DiscreteTrajectory:
    """u_{n+1} = u_n + lam (u_n - u_{n-1}) + h f(u_n + a (u_n - u_{n-1})), u_1 = u_0 + h f(u_0).

    The recurrence is advanced in its velocity form with v_0 = 0 so that the
    u-sequence is shared bit for bit with :func:`run_two_form`.
    """
    pts, _ = _two_form(obj, params.lam, params.a, params.h, u0, None, n_steps)
    return DiscreteTrajectory(params.h, pts)


def run_hb(obj: ObjectiveSpec, lam: float, h: float, u0, n_steps: int) -> DiscreteTrajectory:
    return run_general(obj, MomentumParams(lam, 0.0, h), u0, n_steps)


def run_nag(obj: ObjectiveSpec, lam: float, h: float, u0, n_steps: int) -> DiscreteTrajectory:
    return run_general(obj, MomentumParams(lam, lam, h), u0, n_steps)


def run_two_form(obj: ObjectiveSpec, params: MomentumParams, u0, v0=None,
                 n_steps: int = 1) -> DiscreteTrajectory:
    """(u, v) form: u' = u + h lam v + h f(u + h a v), v' = lam v + f(u + h a v)."""
    pts, vel = _two_form(obj, params.lam, params.a, params.h, u0, v0, n_steps)
    return DiscreteTrajectory(params.h, pts, vel)


def run_gd(obj: ObjectiveSpec, h: float, u0, n_steps: int) -> DiscreteTrajectory:
    """Plain gradient descent u_{n+1} = u_n - h grad Phi(u_n)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    u = _as_vector(u0, obj.dimension)
    pts = np.empty((n_steps + 1, u.size))
    pts[0] = u
    for n in range(n_steps):
        u = u - h * obj.grad(u)
        pts[n + 1] = u
        _check(n + 1, u, pts)
    return DiscreteTrajectory(h, pts)


def run_rescaled_euler(obj: ObjectiveSpec, lam: float, h: float, u0, n_steps: int) -> DiscreteTrajectory:
    """Forward Euler on the rescaled flow: gradient descent with step h / (1 - lam).

    The effective step is formed as ``h * (1 / (1 - lam))`` so that passing
    that product to :func:`run_gd` reproduces the run exactly.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    traj = run_gd(obj, h * (1.0 / (1.0 - lam)), u0, n_steps)
    return DiscreteTrajectory(h, traj.points)


def lambda_mu(mu: float, h: float) -> float:
    """Momentum (1 - sqrt(mu h)) / (1 + sqrt(mu h)) used with strong convexity mu."""
    if mu <= 0 or h < 0:
        raise ValueError("need mu > 0 and h >= 0")
    s = math.sqrt(mu * h)
    if s >= 1.0:
        raise ValueError(f"mu * h = {mu * h} >= 1 gives lambda <= 0")
    return (1.0 - s) / (1.0 + s)


def run_wilson(obj: ObjectiveSpec, mu: float, h: float, u0, v0=None,
               n_steps: int = 1) -> DiscreteTrajectory:
    """Split-step scheme for u'' + 2 sqrt(mu) u' + grad Phi(u) = 0 with time step sqrt(h).

    Exact flow of the damping part followed by a gradient kick.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    dt = math.sqrt(h)
    damp = math.exp(-2.0 * math.sqrt(mu) * dt)
    drift = -math.expm1(-2.0 * math.sqrt(mu) * dt) / (2.0 * math.sqrt(mu))
    u = _as_vector(u0, obj.dimension)
    v = np.zeros_like(u) if v0 is None else _as_vector(v0, obj.dimension)
    pts = np.empty((n_steps + 1, u.size))
    vel = np.empty_like(pts)
    pts[0], vel[0] = u, v
    for n in range(n_steps):
        u = u + drift * v
        v = damp * v - dt * obj.grad(u)
        pts[n + 1], vel[n + 1] = u, v
        _check(n + 1, u, pts, vel)
        _check(n + 1, v, pts, vel)
    return DiscreteTrajectory(h, pts, vel)


def lambda_schedule_n(n: int) -> float:
    """Iteration-dependent momentum n / (n + 3); exploratory only."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return n / (n + 3)
