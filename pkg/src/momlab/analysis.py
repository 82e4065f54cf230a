"""Sup-norm errors and empirical convergence orders over dyadic step sizes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flows import ContinuousSolution
from .schemes import DiscreteTrajectory, DivergenceError

NOISE_FLOOR = 1e-12


class UndefinedRateError(ValueError):
    pass


def sup_error(traj: DiscreteTrajectory, ref: ContinuousSolution, T: float) -> float:
    """max over 0 <= n h <= T of |u_n - u(n h)| in the Euclidean norm."""
    n_max = int(math.floor(T / traj.h + 1e-9))
    if n_max > traj.n_steps:
        raise ValueError(f"trajectory reaches t = {traj.n_steps * traj.h}, shorter than T = {T}")
    times = np.arange(n_max + 1) * traj.h
    diff = traj.points[: n_max + 1] - ref.sample(np.minimum(times, ref.T))
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def rate_delta(err_h: float, err_h2: float) -> float:
    """log2(err_h / err_h2), the observed order between steps h and h/2."""
    if err_h <= 0 or err_h2 <= 0:
        raise UndefinedRateError("errors must be positive to define a rate")
    return math.log2(err_h / err_h2)


def fitted_order(h_list: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log2(error) against log2(h)."""
    x = np.log2(np.asarray(h_list, dtype=float))
    y = np.log2(np.asarray(errors, dtype=float))
    if x.size < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class RateReport:
    h_list: list
    errors: list
    deltas: list
    fitted_order: float
    target: tuple | None = None
    diverged: list = field(default_factory=list)
    below_noise_floor: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.target is None or not math.isfinite(self.fitted_order):
            return False
        lo, hi = self.target
        return lo <= self.fitted_order <= hi

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "err", "delta"])
            for i, (h, e) in enumerate(zip(self.h_list, self.errors)):
                delta = self.deltas[i] if i < len(self.deltas) else math.nan
                w.writerow([f"{h:.17g}", f"{e:.17g}", f"{delta:.17g}"])

    def summary(self) -> str:
        line = f"fitted_order={self.fitted_order:.6f}"
        if self.target is not None:
            line += f" target=[{self.target[0]}, {self.target[1]}] {'PASS' if self.passed else 'FAIL'}"
        if self.diverged:
            line += f" diverged={self.diverged}"
        if self.below_noise_floor:
            line += " below noise floor"
        return line


def rate_from_errors(h_list, errors, target=None, diverged=(), meta=None) -> RateReport:
    """Pairwise deltas over consecutive h and a fitted order above the noise floor."""
    h_list, errors = list(h_list), list(errors)
    deltas = []
    for e1, e2 in zip(errors, errors[1:]):
        try:
            deltas.append(rate_delta(e1, e2))
        except UndefinedRateError:
            deltas.append(math.nan)
    keep = [(h, e) for h, e in zip(h_list, errors) if e > NOISE_FLOOR and math.isfinite(e)]
    floor = [h for h, e in zip(h_list, errors) if not e > NOISE_FLOOR]
    order = fitted_order(*zip(*keep)) if len(keep) >= 2 else math.nan
    return RateReport(h_list, errors, deltas, order, target, list(diverged), floor, meta or {})


def rate_sweep(runner: Callable[[float], DiscreteTrajectory],
               ref_factory: Callable[[float], ContinuousSolution],
               h_list: Sequence[float], T: float, target=None) -> RateReport:
    """Run ``runner(h)`` for every h, compare with ``ref_factory(h)`` up to T.

    Runs that diverge are excluded from the fit and listed in ``diverged``.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ValueError("need at least three step sizes")
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly decreasing")
    kept_h, errs, diverged = [], [], []
    for h in h_list:
        try:
            traj = runner(h)
        except DivergenceError:
            diverged.append(h)
            continue
        kept_h.append(h)
        errs.append(sup_error(traj, ref_factory(h), T))
    return rate_from_errors(kept_h, errs, target, diverged, {"T": T})


def dyadic(first_exp: int, last_exp: int) -> list:
    """[2^-first_exp, ..., 2^-last_exp]."""
    return [2.0 ** -k for k in range(first_exp, last_exp + 1)]
