"""Reference solutions of the continuous-time limits of momentum methods.

Three limits are provided: the rescaled gradient flow, the damped
second-order system whose mass scales with ``h``, and the gradient flow of
the modified potential.  The ODE behind the split-step Wilson scheme is also
here.  Diagonal quadratics get closed forms; everything else goes through
fixed-step RK4 checked by step halving.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .integrate import integrate_verified
from .objective import ObjectiveSpec, derivative_bounds, modified_grad


@dataclass(frozen=True)
class ContinuousSolution:
    """Sampler ``t -> u(t)`` on [0, T] with an error estimate.

    ``sample`` accepts a scalar (returns shape ``(d,)``) or an array of times
    (returns ``(len(t), d)``).  ``velocity`` is available for second-order
    systems.
    """

    T: float
    accuracy: float
    provenance: str
    u0: np.ndarray
    _position: Callable = field(repr=False)
    _velocity: Callable | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def _times(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(arr < -1e-12 * max(1.0, self.T)) or np.any(arr > self.T * (1 + 1e-12) + 1e-15):
            raise ValueError(f"sample time outside [0, {self.T}]")
        return np.clip(arr, 0.0, self.T)

    def sample(self, t) -> np.ndarray:
        arr = self._times(t)
        out = np.asarray(self._position(np.atleast_1d(arr)), dtype=float)
        return out[0] if arr.ndim == 0 else out

    def velocity(self, t) -> np.ndarray:
        if self._velocity is None:
            raise AttributeError("this solution carries no velocity sampler")
        arr = self._times(t)
        out = np.asarray(self._velocity(np.atleast_1d(arr)), dtype=float)
        return out[0] if arr.ndim == 0 else out


def _vec(u0, d):
    u = np.array(u0, dtype=float).reshape(-1)
    if u.size != d:
        raise ValueError(f"expected a vector of length {d}, got {u.size}")
    return u


def _check_T(T):
    if T < 0:
        raise ValueError("T must be nonnegative")


def damped_linear(m: float, b: float, q: np.ndarray, y0: np.ndarray, yp0: np.ndarray,
                  t: np.ndarray):
    """Closed-form solution of m y'' + b y' + q y = 0 per coordinate.

    Returns ``(y, y')`` with shape ``(len(t), d)``.  Written so that the
    overdamped branch neither overflows nor cancels for stiff parameters.
    """
    t = np.asarray(t, dtype=float)[:, None]
    q = np.asarray(q, dtype=float)[None, :]
    sigma = -b / (2.0 * m)
    w2 = sigma * sigma - q / m
    k = yp0 - sigma * y0
    with np.errstate(all="ignore"):
        w = np.sqrt(np.abs(w2))
        es = np.exp(sigma * t)
        # oscillatory branch
        eC_osc = es * np.cos(w * t)
        eS_osc = es * np.where(w > 0, np.sin(w * t) / np.where(w > 0, w, 1.0), t)
        # overdamped branch, two exponentials
        lo = np.exp((sigma - w) * t)
        hi = np.exp((sigma + w) * t)
        small = w * t < 0.5
        eC_exp = 0.5 * (hi + lo)
        eS_exp = np.where(small, lo * np.expm1(2.0 * w * t) / np.where(w > 0, 2.0 * w, 1.0),
                          (hi - lo) / np.where(w > 0, 2.0 * w, 1.0))
    over = w2 > 0
    eC = np.where(over, eC_exp, eC_osc)
    eS = np.where(over, eS_exp, eS_osc)
    zero = w2 == 0
    eC = np.where(zero, es, eC)
    eS = np.where(zero, es * t, eS)
    y = y0 * eC + k * eS
    yp = y0 * (sigma * eC + w2 * eS) + k * (sigma * eS + eC)
    return y, yp


def _first_order_solution(obj, rhs, stiffness, u0, T, rtol, meta):
    d = obj.dimension
    max_dt = min(0.05, 0.5 / max(stiffness, 1e-3))
    path = integrate_verified(rhs, u0, T, max_dt, rtol=rtol)
    interp = path.interpolant()
    return ContinuousSolution(T, path.error, "integrated", u0, lambda t: interp(t).reshape(-1, d),
                              meta={**meta, "rk4_steps": path.n_steps})


def _b1_guess(obj: ObjectiveSpec) -> float:
    if obj.is_diagonal_quadratic:
        return float(np.max(np.abs(obj.diag)))
    if obj.kind == "trigonometric":
        return derivative_bounds(obj).B1
    return 1.0


def solve_rgf(obj: ObjectiveSpec, lam: float, u0, T: float, rtol: float = 1e-10,
              force_integrate: bool = False) -> ContinuousSolution:
    """du/dt = -(1 - lam)^{-1} grad Phi(u), u(0) = u0."""
    _check_T(T)
    u0 = _vec(u0, obj.dimension)
    lb = 1.0 / (1.0 - lam)
    if obj.is_diagonal_quadratic and not force_integrate:
        rate = lb * obj.diag
        c = obj.center

        def pos(t):
            return c + (u0 - c) * np.exp(-np.outer(t, rate))

        return ContinuousSolution(T, 0.0, "closed-form", u0, pos, meta={"lambda": lam})
    return _first_order_solution(obj, lambda y: -lb * obj.grad(y), lb * _b1_guess(obj), u0, T,
                                 rtol, {"lambda": lam})


def alpha_of(lam: float, a: float) -> float:
    return 0.5 * (1.0 + lam - 2.0 * a * (1.0 - lam))


def beta_init(obj: ObjectiveSpec, lam: float, a: float, u0) -> np.ndarray:
    """Initial velocity ((1 - 2 alpha) / (2 alpha - lam + 1)) f(u0)."""
    alpha = alpha_of(lam, a)
    coef = (1.0 - 2.0 * alpha) / (2.0 * alpha - lam + 1.0)
    return coef * obj.force(_vec(u0, obj.dimension))


def beta_init_matched(obj: ObjectiveSpec, lam: float, a: float, u0) -> np.ndarray:
    """Initial velocity ((2 alpha - 1) / (2 alpha + lam - 1)) f(u0).

    Chosen so the second-order Taylor step u(0) + h u'(0) + h^2 u''(0) / 2 equals
    the first scheme step u0 + h f(u0).  :func:`beta_init` differs in sign and numerator.
    """
    alpha = alpha_of(lam, a)
    denom = 2.0 * alpha + lam - 1.0
    if denom <= 0:
        raise ValueError("2 alpha + lam - 1 must be positive")
    return (2.0 * alpha - 1.0) / denom * obj.force(_vec(u0, obj.dimension))


def solve_visco(obj: ObjectiveSpec, lam: float, a: float, h: float, u0, u0_prime="beta-default",
                T: float = 5.0, rtol: float = 1e-10, force_integrate: bool = False) -> ContinuousSolution:
    """h alpha u'' + (1 - lam) u' = -grad Phi(u) with u(0) = u0, u'(0) = u0_prime."""
    _check_T(T)
    alpha = alpha_of(lam, a)
    if alpha <= 0:
        raise ValueError(f"alpha = {alpha} must be strictly positive")
    u0 = _vec(u0, obj.dimension)
    if isinstance(u0_prime, str):
        if u0_prime not in ("beta-default", "beta-matched"):
            raise ValueError(f"unknown initial velocity {u0_prime!r}")
        up0 = (beta_init if u0_prime == "beta-default" else beta_init_matched)(obj, lam, a, u0)
    else:
        up0 = _vec(u0_prime, obj.dimension)
    try:
        b1 = derivative_bounds(obj, "global").B1 if obj.kind == "trigonometric" else _b1_guess(obj)
    except ValueError:
        b1 = None
    if b1 and h > (1.0 - lam) ** 2 / (2.0 * alpha * b1):
        warnings.warn(f"h = {h} exceeds (1 - lam)^2 / (2 alpha B1) = "
                      f"{(1.0 - lam) ** 2 / (2.0 * alpha * b1):.4g}", RuntimeWarning, stacklevel=2)
    m, damping = h * alpha, 1.0 - lam
    meta = {"lambda": lam, "a": a, "h": h, "alpha": alpha}
    d = obj.dimension
    if obj.is_diagonal_quadratic and not force_integrate:
        c = obj.center
        q = obj.diag

        def pos(t):
            return c + damped_linear(m, damping, q, u0 - c, up0, t)[0]

        def vel(t):
            return damped_linear(m, damping, q, u0 - c, up0, t)[1]

        return ContinuousSolution(T, 0.0, "closed-form", u0, pos, vel, meta)

    def rhs(y):
        u, v = y[:d], y[d:]
        return np.concatenate([v, (-obj.grad(u) - damping * v) / m])

    path = integrate_verified(rhs, np.concatenate([u0, up0]), T, h / 50.0, rtol=rtol, align=h)
    interp = path.interpolant()
    return ContinuousSolution(T, path.error, "integrated", u0,
                              lambda t: interp(t)[..., :d].reshape(-1, d),
                              lambda t: interp(t)[..., d:].reshape(-1, d),
                              {**meta, "rk4_steps": path.n_steps})


def c_coefficient(lam: float, a: float) -> float:
    """Coefficient of the modified potential, lambda_bar (lambda_bar - a + 1/2)."""
    lb = 1.0 / (1.0 - lam)
    return lb * (lb - a + 0.5)


def c_coefficient_matched(lam: float, a: float) -> float:
    """lambda_bar (lambda_bar - a - 1/2), the coefficient that matches the on-manifold map to O(h^3) per step.

    Expanding u(t - h) about t with u'' = +lambda_bar^2 D^2Phi grad Phi gives
    this value; :func:`c_coefficient` carries the opposite sign on the 1/2.
    """
    lb = 1.0 / (1.0 - lam)
    return lb * (lb - a - 0.5)


def solve_modified_flow(obj: ObjectiveSpec, lam: float, a: float, h: float, u0, T: float,
                        rtol: float = 1e-10, closed_form: bool = False,
                        c: float | None = None) -> ContinuousSolution:
    """du/dt = -(1 - lam)^{-1} grad Phi_h(u), Phi_h = Phi + (h c / 2) |grad Phi|^2.

    ``c`` defaults to :func:`c_coefficient`.
    """
    _check_T(T)
    u0 = _vec(u0, obj.dimension)
    if c is None:
        c = c_coefficient(lam, a)
    lb = 1.0 / (1.0 - lam)
    meta = {"lambda": lam, "a": a, "h": h, "c": c}
    if closed_form:
        if not obj.is_diagonal_quadratic:
            raise ValueError("closed form needs a diagonal quadratic")
        rate = lb * obj.diag * (1.0 + h * c * obj.diag)
        ctr = obj.center

        def pos(t):
            return ctr + (u0 - ctr) * np.exp(-np.outer(t, rate))

        return ContinuousSolution(T, 0.0, "closed-form", u0, pos, meta=meta)
    b1 = _b1_guess(obj)
    return _first_order_solution(obj, lambda y: -lb * modified_grad(obj, c, h, y),
                                 lb * b1 * (1.0 + h * c * b1), u0, T, rtol, meta)


def solve_wilson_ode(obj: ObjectiveSpec, mu: float, u0, v0=None, T: float = 5.0,
                     rtol: float = 1e-10) -> ContinuousSolution:
    """u'' + 2 sqrt(mu) u' + grad Phi(u) = 0 by verified RK4."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    _check_T(T)
    d = obj.dimension
    u0 = _vec(u0, d)
    v0 = np.zeros(d) if v0 is None else _vec(v0, d)
    damping = 2.0 * math.sqrt(mu)

    def rhs(y):
        u, v = y[:d], y[d:]
        return np.concatenate([v, -damping * v - obj.grad(u)])

    scale = max(damping, math.sqrt(_b1_guess(obj)), 1.0)
    path = integrate_verified(rhs, np.concatenate([u0, v0]), T, min(0.05, 0.2 / scale), rtol=rtol)
    interp = path.interpolant()
    return ContinuousSolution(T, path.error, "integrated", u0,
                              lambda t: interp(t)[..., :d].reshape(-1, d),
                              lambda t: interp(t)[..., d:].reshape(-1, d),
                              {"mu": mu, "rk4_steps": path.n_steps})


@dataclass(frozen=True)
class ManufacturedPath:
    """A smooth curve with known derivatives: ``derivative(k, t)`` is d^k u / dt^k."""

    derivative: Callable[[int, float], np.ndarray]

    def __call__(self, t):
        return self.derivative(0, t)


def exponential_path(rate: float = -1.0, amplitude=1.0) -> ManufacturedPath:
    amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
    return ManufacturedPath(lambda k, t: amp * rate ** k * math.exp(rate * t))


def sine_path(freq: float = 1.0, amplitude=1.0) -> ManufacturedPath:
    amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
    return ManufacturedPath(lambda k, t: amp * freq ** k * math.sin(freq * t + k * math.pi / 2))


def polynomial_path(coeffs) -> ManufacturedPath:
    """u(t) = sum_j coeffs[j] t^j (scalar)."""
    poly = np.polynomial.Polynomial(coeffs)
    return ManufacturedPath(lambda k, t: np.atleast_1d(poly.deriv(k)(t) if k else poly(t)))


def modified_operator_residual(obj, lam: float, p: int, h: float, u_ref: ManufacturedPath,
                               t: float) -> np.ndarray:
    """Residual of the HB recurrence on a path solving the order-p modified equation.

    The force is replaced by ``sum_{k<=p} h^(k-1) (1 + (-1)^k lam) / k! u^(k)(t)``,
    which makes ``u_ref`` an exact solution; the residual is then
    ``u(t+h) - u(t) - lam (u(t) - u(t-h)) - h * force`` and scales like
    ``h^(p+1)``.  ``obj`` is unused and kept for interface symmetry.
    """
    if p not in (1, 2, 3):
        raise ValueError(f"order p must be 1, 2 or 3, got {p}")
    forcing = sum(h ** (k - 1) * (1.0 + (-1) ** k * lam) / math.factorial(k) * u_ref.derivative(k, t)
                  for k in range(1, p + 1))
    u_t = u_ref(t)
    return u_ref(t + h) - u_t - lam * (u_t - u_ref(t - h)) - h * forcing
