"""Invariant manifold v = lambda_bar f(u) + h g(u) of the two-step momentum map.

The graph function g is the fixed point of an operator T acting on bounded
Lipschitz functions.  Here T is realised on a tensor grid with multilinear
interpolation, together with the step-size constants that guarantee T is a
contraction and the resulting exponential attraction bound.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .objective import DerivativeBounds, ObjectiveSpec, derivative_bounds
from .schemes import DiscreteTrajectory, MomentumParams

# Assumption-3 conditions in the order they are listed.
CONDITIONS = (
    ("gamma_feasible", "lambda + h B1 (a + lambda lambda_bar) < 1"),
    ("alpha1_negative", "alpha_1 < 0"),
    ("delta_discriminant", "alpha_1^2 > 4 alpha_2 alpha_0"),
    ("inner_contraction", "c = h (lambda K2 + B1 (1 + h a K2)) < 1"),
    ("q3_below_one", "Q3 < 1"),
    ("t_contraction", "mu = lambda + Q2 + h^2 (lambda + h a B1) Q1 / (1 - Q3) < 1"),
    ("attraction", "lambda + h^2 lambda delta < 1"),
)


class AssumptionViolated(RuntimeError):
    pass


class DomainEscapeError(RuntimeError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


class BoundVacuousWarning(RuntimeWarning):
    pass


@dataclass
class ConstantsReport:
    B0: float
    B1: float
    B2: float
    lam: float
    a: float
    h: float
    delta_choice: str = "upper"
    gamma: float = math.nan
    delta: float = math.nan
    delta_lower: float = math.nan
    K1: float = math.nan
    K2: float = math.nan
    K3: float = math.nan
    alpha2: float = math.nan
    alpha1: float = math.nan
    alpha0: float = math.nan
    c_inner: float = math.nan
    Q1: float = math.nan
    Q2: float = math.nan
    Q3: float = math.nan
    contraction_factor: float = math.nan
    attraction_factor: float = math.nan
    flags: dict = field(default_factory=dict)

    @property
    def lambda_bar(self) -> float:
        return 1.0 / (1.0 - self.lam)

    @property
    def passed(self) -> bool:
        return all(self.flags.get(name, False) for name, _ in CONDITIONS)

    def as_dict(self) -> dict:
        keys = ["B0", "B1", "B2", "lam", "a", "h", "delta_choice", "gamma", "delta", "delta_lower",
                "K1", "K2", "K3", "alpha2", "alpha1", "alpha0", "c_inner", "Q1", "Q2", "Q3",
                "contraction_factor", "attraction_factor"]
        out = {k: getattr(self, k) for k in keys}
        out["flags"] = dict(self.flags)
        out["passed"] = self.passed
        return out


def constants_report(bounds: DerivativeBounds, lam: float, a: float, h: float,
                     delta_choice: str = "upper") -> ConstantsReport:
    """Evaluate every step-size constant in order and flag each condition.

    gamma is the smallest admissible bound (where the linear inequality is
    tight).  delta is the upper root of the quadratic inequality by default;
    ``delta_choice="lower"`` takes the lower root instead.  Failures are
    reported through ``flags``; nothing is raised.
    """
    if delta_choice not in ("upper", "lower"):
        raise ValueError("delta_choice must be 'upper' or 'lower'")
    B0, B1, B2 = bounds.B0, bounds.B1, bounds.B2
    if not all(map(math.isfinite, (B0, B1, B2))):
        raise ValueError("derivative bounds must be finite")
    r = ConstantsReport(B0, B1, B2, lam, a, h, delta_choice)
    flags = r.flags
    lb = 1.0 / (1.0 - lam)

    slope = lam + h * B1 * (a + lam * lb)
    flags["gamma_feasible"] = slope < 1.0
    if not flags["gamma_feasible"]:
        return _fill_failed(r)
    r.gamma = lb * B0 * B1 * (a + lb) / (1.0 - slope)
    r.K1 = lb * B0 + h * r.gamma
    r.K3 = B0 + lam * r.K1
    K1, K3 = r.K1, r.K3
    r.alpha2 = h * h * (lam + h * a * B1)
    r.alpha1 = lam - 1.0 + h * (B1 * (lb + a * (1.0 + h * lb * B1))
                                + lam * lb * (B1 + h * B2 * K3)
                                + h * a * (a * B2 * K1 + B1 * lb * (B1 + h * B2 * K3)))
    r.alpha0 = (a * B2 * K1 * (1.0 + h * a * lb * B1) + lb * (a * B1 ** 2 + B2 * K3)
                + lb ** 2 * B1 * (1.0 + h * a * B1) * (B1 + h * B2 * K3))
    disc = r.alpha1 ** 2 - 4.0 * r.alpha2 * r.alpha0
    flags["alpha1_negative"] = r.alpha1 < 0
    flags["delta_discriminant"] = disc > 0 and r.alpha2 > 0
    if not (flags["alpha1_negative"] and flags["delta_discriminant"]):
        return _fill_failed(r)
    root = math.sqrt(disc)
    upper = (-r.alpha1 + root) / (2.0 * r.alpha2)
    # product of roots is alpha0 / alpha2; avoids cancellation for small h
    lower = (2.0 * r.alpha0) / (-r.alpha1 + root)
    r.delta_lower = lower
    r.delta = upper if delta_choice == "upper" else lower
    d = r.delta
    r.K2 = lb * B1 + h * d
    K2 = r.K2
    r.c_inner = h * (lam * K2 + B1 * (1.0 + h * a * K2))
    flags["inner_contraction"] = r.c_inner < 1.0
    r.Q1 = (lam * d + a * (B1 * K2 + B2 * K1 * (1.0 + h * a * K2))
            + lb * ((B1 + h * B2 * K3) * (lam * K2 + B1 * (1.0 + h * a * K2)) + B2 * K3))
    r.Q2 = h * (a * (B1 + h * a * B2 * K1) + lb * (lam + h * a * B1) * (B1 + h * B2 * K3))
    r.Q3 = h * (lam * K2 + B1 * (1.0 + h * a * K2))
    flags["q3_below_one"] = r.Q3 < 1.0
    if flags["q3_below_one"]:
        r.contraction_factor = lam + r.Q2 + h * h * (lam + h * a * B1) * r.Q1 / (1.0 - r.Q3)
    else:
        r.contraction_factor = math.inf
    flags["t_contraction"] = r.contraction_factor < 1.0
    r.attraction_factor = lam + h * h * lam * d
    flags["attraction"] = r.attraction_factor < 1.0
    return r


def _fill_failed(r: ConstantsReport) -> ConstantsReport:
    for name, _ in CONDITIONS:
        r.flags.setdefault(name, False)
    return r


def check_h_small(report: ConstantsReport):
    """``(True, None)`` if every condition holds, else ``(False, first violated inequality)``."""
    for name, text in CONDITIONS:
        if not report.flags.get(name, False):
            return False, f"{name}: {text}"
    return True, None


def h_threshold(bounds: DerivativeBounds, lam: float, a: float, h_max: float = 1.0,
                rel_tol: float = 1e-6, delta_choice: str = "upper") -> float:
    """Largest h (to ``rel_tol``) at which every step-size condition holds, by bisection.

    Returns 0.0 when nothing in (0, h_max] passes on a dyadic scan.
    """
    def ok(h):
        return constants_report(bounds, lam, a, h, delta_choice).passed

    if ok(h_max):
        return h_max
    hi = h_max
    lo = hi / 2
    while not ok(lo):
        hi, lo = lo, lo / 2
        if lo < 1e-12:
            return 0.0
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def leading_order_g(obj: ObjectiveSpec, lam: float, a: float, p) -> np.ndarray:
    """g to leading order in h: lambda_bar^2 (a - lambda_bar) Df(p) f(p)."""
    lb = 1.0 / (1.0 - lam)
    p = np.asarray(p, dtype=float)
    # Df = -D^2 Phi and f = -grad Phi, so Df f = D^2 Phi grad Phi
    return lb * lb * (a - lb) * obj.hess_vec(p, obj.grad(p))


class _Graph:
    """Multilinear interpolant of node values, clamped to the grid box."""

    def __init__(self, axes, values):
        self.axes = axes
        self.values = values
        self.lower = np.array([ax[0] for ax in axes])
        self.upper = np.array([ax[-1] for ax in axes])
        self._interp = RegularGridInterpolator(tuple(axes), values, method="linear")
        self.clamped_evals = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, len(self.axes))
        clipped = np.clip(flat, self.lower, self.upper)
        self.clamped_evals += int(np.count_nonzero(np.any(clipped != flat, axis=-1)))
        return self._interp(clipped).reshape(x.shape)


@dataclass
class ManifoldGraph:
    """Grid samples of g on the inner box widened by ``margin`` on every side."""

    inner_box: np.ndarray
    margin: float
    resolution: tuple
    values: np.ndarray
    residual: float = math.inf
    report: ConstantsReport | None = None
    sweeps: int = 0
    update_norms: list = field(default_factory=list)
    clamped_evals: int = 0

    def __post_init__(self):
        self.inner_box = np.asarray(self.inner_box, dtype=float)
        self._graph = _Graph(self.axes, self.values)

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    @property
    def box(self) -> np.ndarray:
        return np.column_stack([self.inner_box[:, 0] - self.margin,
                                self.inner_box[:, 1] + self.margin])

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.resolution)]

    @property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.box, self.resolution)])

    def __call__(self, x) -> np.ndarray:
        out = self._graph(x)
        self.clamped_evals = self._graph.clamped_evals
        return out

    def node_values(self) -> np.ndarray:
        return self.values.reshape(-1, self.dimension)

    def inner_mask(self) -> np.ndarray:
        pts = self.nodes
        tol = 1e-12 * (1.0 + np.abs(self.inner_box).max())
        return np.all((pts >= self.inner_box[:, 0] - tol) & (pts <= self.inner_box[:, 1] + tol), axis=-1)

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.node_values(), axis=-1)))

    def lipschitz_estimate(self) -> float:
        """Largest difference quotient between neighbouring nodes along each axis."""
        worst = 0.0
        for ax, hstep in enumerate(self.spacing):
            diff = np.diff(self.values, axis=ax)
            worst = max(worst, float(np.max(np.linalg.norm(diff, axis=-1)) / hstep))
        return worst

    def in_gamma(self, grid_tol: float = 1e-9) -> bool:
        if self.report is None:
            raise ValueError("no constants report attached")
        return (self.sup_norm() <= self.report.gamma * (1 + grid_tol)
                and self.lipschitz_estimate() <= self.report.delta * (1 + grid_tol))

    def with_values(self, values: np.ndarray, **changes) -> "ManifoldGraph":
        kw = dict(inner_box=self.inner_box, margin=self.margin, resolution=self.resolution,
                  values=values, residual=self.residual, report=self.report, sweeps=self.sweeps,
                  update_norms=list(self.update_norms))
        kw.update(changes)
        return ManifoldGraph(**kw)


def empty_graph(inner_box, margin: float, resolution, d: int, fill=None, report=None) -> ManifoldGraph:
    inner_box = np.asarray(inner_box, dtype=float).reshape(d, 2)
    res = tuple(int(n) for n in np.broadcast_to(resolution, (d,)))
    if min(res) < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    values = np.zeros(res + (d,))
    g = ManifoldGraph(inner_box, margin, res, values, report=report)
    if fill is not None:
        g = g.with_values(np.asarray(fill(g.nodes), dtype=float).reshape(res + (d,)))
    return g


def _w_z(g, obj: ObjectiveSpec, params: MomentumParams, xi):
    lam, a, h = params.lam, params.a, params.h
    w = params.lambda_bar * obj.force(xi) + h * g(xi)
    z = lam * w + obj.force(xi + h * a * w)
    return w, z


def solve_inner_xi(g, obj: ObjectiveSpec, params: MomentumParams, p, tol: float = 1e-13,
                   c_inner: float | None = None, max_iter: int | None = None) -> np.ndarray:
    """Solve p = xi + h z_g(xi) for xi by Picard iteration started at xi = p.

    Works on a single point or a batch ``(N, d)``.  ``tol`` is absolute on the
    defect ``|xi + h z_g(xi) - p|`` scaled by ``1 + |p|``.
    """
    p = np.asarray(p, dtype=float)
    h = params.h
    xi = p.copy()
    scale = 1.0 + np.linalg.norm(p, axis=-1)
    if max_iter is None:
        if c_inner is not None and 0 < c_inner < 1:
            pnorm = max(float(np.max(np.linalg.norm(p, axis=-1))), 1.0)
            max_iter = max(0, math.ceil(math.log(tol / pnorm) / math.log(c_inner))) + 50
        else:
            max_iter = 500
    for _ in range(max_iter + 1):
        _, z = _w_z(g, obj, params, xi)
        defect = np.linalg.norm(xi + h * z - p, axis=-1)
        if np.all(defect <= tol * scale):
            return xi
        xi = p - h * z
    raise ConvergenceFailure(f"inner Picard iteration did not converge in {max_iter} steps "
                             f"(max defect {float(np.max(defect)):.3e}); the inner contraction "
                             "condition is likely violated")


def _gauss_legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _path_integral(obj: ObjectiveSpec, base, direction, step, nodes, weights):
    """int_0^1 Df(base + s step direction) direction ds with Df = -D^2 Phi."""
    if obj.is_diagonal_quadratic:
        return -obj.hess_vec(base, direction)
    acc = np.zeros_like(direction)
    for s, wt in zip(nodes, weights):
        acc = acc - wt * obj.hess_vec(base + s * step * direction, direction)
    return acc


def apply_T(g: ManifoldGraph, obj: ObjectiveSpec, params: MomentumParams, quadrature_order: int = 5,
            tol_inner: float = 1e-13, exact_quadratic: bool = True) -> ManifoldGraph:
    """One application of T at every grid node p.

    Solve p = xi + h z_g(xi), then set (Tg)(p) = lam g(xi) + a I1(xi) - lambda_bar I2(xi)
    where I1, I2 are the averaged Jacobians of f along the two Taylor
    segments.  ``exact_quadratic=False`` forces quadrature even when Df is
    constant.
    """
    lam, a, h = params.lam, params.a, params.h
    p = g.nodes
    c_inner = g.report.c_inner if g.report is not None else None
    xi = solve_inner_xi(g, obj, params, p, tol_inner, c_inner)
    escape = np.maximum(g.box[:, 0] - xi, xi - g.box[:, 1]).max()
    if escape > g.margin * (1.0 + 1e-9) + 1e-14:
        raise DomainEscapeError(f"xi left the grid box by {escape:.3e} > margin {g.margin:.3e}; "
                                "increase the margin")
    w, z = _w_z(g, obj, params, xi)
    nodes, weights = _gauss_legendre(quadrature_order)
    if exact_quadratic and obj.is_diagonal_quadratic:
        i1 = -obj.hess_vec(xi, w)
        i2 = -obj.hess_vec(xi, z)
    else:
        saved = obj.is_diagonal_quadratic and not exact_quadratic
        if saved:
            i1 = np.zeros_like(w)
            i2 = np.zeros_like(z)
            for s, wt in zip(nodes, weights):
                i1 -= wt * obj.hess_vec(xi + s * h * a * w, w)
                i2 -= wt * obj.hess_vec(xi + s * h * z, z)
        else:
            i1 = _path_integral(obj, xi, w, h * a, nodes, weights)
            i2 = _path_integral(obj, xi, z, h, nodes, weights)
    new = lam * g(xi) + a * i1 - params.lambda_bar * i2
    out = g.with_values(new.reshape(g.values.shape))
    out.clamped_evals = g.clamped_evals
    return out


def _expanded_report(obj, params, box, delta_choice, max_rounds=30):
    box = np.asarray(box, dtype=float).reshape(obj.dimension, 2)
    margin = 0.0
    for _ in range(max_rounds):
        # xi may sit up to h K3 outside the grid box, so the bounds cover two margins
        wide = np.column_stack([box[:, 0] - 2 * margin, box[:, 1] + 2 * margin])
        bounds = derivative_bounds(obj, wide)
        report = constants_report(bounds, params.lam, params.a, params.h, delta_choice)
        if not report.flags.get("gamma_feasible"):
            return report, margin
        new_margin = params.h * report.K3
        if abs(new_margin - margin) <= 1e-12 * (1.0 + new_margin):
            return report, new_margin
        margin = new_margin
    return report, margin


def solve_manifold_g(obj: ObjectiveSpec, params: MomentumParams, box, grid_res=33,
                     tol_outer: float = 1e-12, delta_choice: str = "upper",
                     quadrature_order: int = 5, max_sweeps: int | None = None) -> ManifoldGraph:
    """Fixed point of T on the box widened by h K3, started from the leading-order g.

    Raises :class:`AssumptionViolated` when the step-size conditions fail on
    the widened box, and :class:`ConvergenceFailure` when three consecutive
    sweeps fail to shrink the update.
    """
    d = obj.dimension
    if d > 3:
        raise ValueError("grid representation supports d <= 3")
    report, margin = _expanded_report(obj, params, box, delta_choice)
    ok, why = check_h_small(report)
    if not ok:
        raise AssumptionViolated(f"step-size conditions fail: {why}")
    g = empty_graph(box, margin, grid_res, d,
                    fill=lambda x: leading_order_g(obj, params.lam, params.a, x), report=report)
    norms = []
    growth = 0
    limit = max_sweeps or 10_000
    prev = None
    for sweep in range(1, limit + 1):
        new = apply_T(g, obj, params, quadrature_order)
        upd = float(np.max(np.linalg.norm(new.values - g.values, axis=-1)))
        norms.append(upd)
        g = new
        if max_sweeps is None and sweep == 1 and upd > 0 and report.contraction_factor < 1:
            limit = max(1, math.ceil(math.log(tol_outer / upd) / math.log(report.contraction_factor))) + 10
        if upd < tol_outer:
            break
        if prev is not None and prev > 0 and upd > prev:
            growth += 1
            if growth >= 3:
                raise ConvergenceFailure(f"T is not contracting (update grew 3 sweeps in a row); "
                                         f"contraction flag t_contraction={report.flags['t_contraction']}")
        else:
            growth = 0
        prev = upd
    else:
        raise ConvergenceFailure(f"no convergence to {tol_outer} within {limit} sweeps")
    return g.with_values(g.values, residual=norms[-1], sweeps=len(norms), update_norms=norms)


def update_ratios(graph: ManifoldGraph) -> np.ndarray:
    n = np.asarray(graph.update_norms)
    mask = n[:-1] > 1e-14
    return n[1:][mask] / n[:-1][mask]


def manifold_distance(traj: DiscreteTrajectory, obj: ObjectiveSpec, params: MomentumParams,
                      g_mode="leading-order") -> np.ndarray:
    """e_n = |v_n - lambda_bar f(u_n) - h g(u_n)|; ``g_mode`` is "leading-order" or a graph."""
    if traj.velocities is None:
        raise ValueError("trajectory carries no velocities")
    u, v = traj.points, traj.velocities
    if isinstance(g_mode, str):
        if g_mode != "leading-order":
            raise ValueError(f"unknown g_mode {g_mode!r}")
        gu = leading_order_g(obj, params.lam, params.a, u)
    else:
        gu = g_mode(u)
    return np.linalg.norm(v - params.lambda_bar * obj.force(u) - params.h * gu, axis=-1)


def attraction_bound(e0: float, delta: float, lam: float, h: float, n):
    """(lam + h^2 lam delta)^n e0."""
    factor = lam + h * h * lam * delta
    if factor >= 1.0:
        warnings.warn(f"attraction factor {factor} >= 1, bound is vacuous", BoundVacuousWarning,
                      stacklevel=2)
    return factor ** np.asarray(n, dtype=float) * e0
