"""Fixed-step classical Runge-Kutta with step-halving error control."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline


def rk4_path(rhs: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, T: float, n: int):
    """Integrate an autonomous system with ``n`` equal RK4 steps on [0, T].

    Returns node times, states and right-hand sides at the nodes.
    """
    dt = T / n
    ys = np.empty((n + 1, y0.size))
    fs = np.empty_like(ys)
    y = np.array(y0, dtype=float)
    ys[0] = y
    k1 = rhs(y)
    fs[0] = k1
    for i in range(n):
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys[i + 1] = y
        k1 = rhs(y)
        fs[i + 1] = k1
    return np.linspace(0.0, T, n + 1), ys, fs


@dataclass
class VerifiedPath:
    times: np.ndarray
    states: np.ndarray
    rates: np.ndarray
    error: float
    n_steps: int

    def interpolant(self):
        if len(self.times) < 2:
            y = self.states[0]
            return lambda t: np.broadcast_to(y, np.shape(t) + y.shape).copy()
        return CubicHermiteSpline(self.times, self.states, self.rates, axis=0)


def integrate_verified(rhs, y0, T: float, max_dt: float, rtol: float = 1e-10,
                       max_halvings: int = 14, align: float | None = None) -> VerifiedPath:
    """RK4 with fixed steps, halved until the Richardson estimate meets ``rtol``.

    The estimate is ``max |y_dt - y_{dt/2}| / 15`` on the coarse nodes and the
    target is ``rtol * (1 + sup |y|)``.  When ``align`` is given the step
    divides it exactly, so grid times ``k * align`` fall on nodes.
    """
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if T == 0:
        f0 = np.asarray(rhs(y0), dtype=float)
        return VerifiedPath(np.zeros(1), y0[None, :], f0[None, :], 0.0, 0)
    if align is not None and align > 0:
        per = max(1, math.ceil(align / max_dt))
        n = max(1, round(T / align)) * per
        if not math.isclose(n / per * align, T, rel_tol=1e-12):
            n = max(1, math.ceil(T / max_dt))
    else:
        n = max(1, math.ceil(T / max_dt))
    coarse = rk4_path(rhs, y0, T, n)
    for _ in range(max_halvings):
        fine = rk4_path(rhs, y0, T, 2 * n)
        diff = np.max(np.abs(fine[1][::2] - coarse[1]))
        err = diff / 15.0
        scale = 1.0 + np.max(np.linalg.norm(fine[1], axis=-1))
        if err < rtol * scale:
            return VerifiedPath(*fine, err, 2 * n)
        coarse, n = fine, 2 * n
    raise RuntimeError(f"RK4 did not reach rtol={rtol} after {max_halvings} halvings "
                       f"(estimate {err:.3e})")
