"""Closed-form test objectives with hand-coded derivatives.

Every callable on :class:`ObjectiveSpec` acts on the last axis, so a batch
of points of shape ``(..., d)`` can be evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class UnsupportedBoundsError(ValueError):
    """Raised when global derivative bounds do not exist for an objective."""


@dataclass(frozen=True)
class ObjectiveSpec:
    """A differentiable objective Phi together with its first two derivatives.

    ``grad`` returns the gradient of Phi (the force is ``f = -grad``) and
    ``hess_vec(u, w)`` returns ``D^2 Phi(u) w``.  ``diag`` and ``center`` are
    set only for diagonal quadratics and unlock closed-form reference flows.
    """

    dimension: int
    phi: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess_vec: Callable[[Array, Array], Array]
    kind: str
    params: dict = field(default_factory=dict)
    diag: Array | None = None
    center: Array | None = None

    def force(self, u: Array) -> Array:
        return -self.grad(u)

    @property
    def is_diagonal_quadratic(self) -> bool:
        return self.kind == "quadratic" and self.diag is not None


@dataclass(frozen=True)
class DerivativeBounds:
    """Bounds B0 >= |grad Phi|, B1 >= ||D^2 Phi||, B2 >= ||D^3 Phi||.

    ``box`` is ``None`` for global bounds, otherwise an array of shape (d, 2)
    holding lower and upper corners.
    """

    B0: float
    B1: float
    B2: float
    box: Array | None = None
    approximate: bool = False


def _as_box(box, d: int) -> Array:
    arr = np.asarray(box, dtype=float)
    if arr.shape == (2,) and d == 1:
        arr = arr.reshape(1, 2)
    if arr.shape != (d, 2):
        raise ValueError(f"box must have shape ({d}, 2), got {arr.shape}")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError("box is empty: lower corner exceeds upper corner")
    return arr


def make_diagonal_quadratic(diag: Sequence[float], center: Sequence[float] | None = None,
                            params: dict | None = None) -> ObjectiveSpec:
    """Phi(u) = 1/2 <u - c, Q (u - c)> with Q = diag(diag).

    Entries of ``diag`` may be zero or negative; ``make_quadratic`` is the
    validated front door used by experiments.
    """
    q = np.array(diag, dtype=float)
    if q.ndim != 1 or q.size < 1:
        raise ValueError("diag must be a non-empty vector")
    c = np.zeros_like(q) if center is None else np.array(center, dtype=float)
    if c.shape != q.shape:
        raise ValueError("center must match the dimension of diag")
    q.setflags(write=False)
    c.setflags(write=False)

    def phi(u):
        x = np.asarray(u, dtype=float) - c
        return 0.5 * np.sum(q * x * x, axis=-1)

    def grad(u):
        return q * (np.asarray(u, dtype=float) - c)

    def hess_vec(u, w):
        return q * np.asarray(w, dtype=float)

    return ObjectiveSpec(q.size, phi, grad, hess_vec, "quadratic",
                         params or {"diag": q.tolist()}, diag=q, center=c)


def make_quadratic(kappa: float, d: int, center: Sequence[float] | None = None) -> ObjectiveSpec:
    """Diagonal quadratic with condition number exactly ``kappa``.

    Q_11 = kappa, Q_dd = 1 and the interior entries are geometrically spaced
    between them.
    """
    if not kappa >= 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    d = int(d)
    if d == 1:
        diag = np.array([float(kappa)])
    else:
        diag = float(kappa) ** (1.0 - np.arange(d) / (d - 1))
        diag[0], diag[-1] = float(kappa), 1.0
    return make_diagonal_quadratic(diag, center, params={"kappa": float(kappa), "d": d})


def make_trigonometric(d: int, amplitudes: Sequence[float] | float = 1.0) -> ObjectiveSpec:
    """Phi(u) = sum_i c_i (1 - cos u_i), nonconvex with bounded derivatives."""
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    d = int(d)
    c = np.broadcast_to(np.asarray(amplitudes, dtype=float), (d,)).copy()
    if np.any(c <= 0):
        raise ValueError("amplitudes must be positive")
    c.setflags(write=False)

    def phi(u):
        return np.sum(c * (1.0 - np.cos(u)), axis=-1)

    def grad(u):
        return c * np.sin(u)

    def hess_vec(u, w):
        return c * np.cos(u) * np.asarray(w, dtype=float)

    return ObjectiveSpec(d, phi, grad, hess_vec, "trigonometric",
                         {"d": d, "amplitudes": c.tolist()})


def make_composite(*parts: ObjectiveSpec) -> ObjectiveSpec:
    """Sum of objectives of equal dimension; bounds are estimated by sampling."""
    if not parts:
        raise ValueError("need at least one objective")
    d = parts[0].dimension
    if any(p.dimension != d for p in parts):
        raise ValueError("all parts must share a dimension")

    def phi(u):
        return sum(p.phi(u) for p in parts)

    def grad(u):
        return sum(p.grad(u) for p in parts)

    def hess_vec(u, w):
        return sum(p.hess_vec(u, w) for p in parts)

    return ObjectiveSpec(d, phi, grad, hess_vec, "composite",
                         {"parts": [{"kind": p.kind, **p.params} for p in parts]})


def derivative_bounds(obj: ObjectiveSpec, box="global", n_samples: int = 4096,
                      seed: int = 0) -> DerivativeBounds:
    """Bounds on the first three derivatives of Phi over ``box``.

    Quadratics get exact bounds on a finite box and raise
    :class:`UnsupportedBoundsError` for ``box="global"``.  Trigonometric
    objectives always get their global analytic bounds.  Anything else is
    estimated by dense sampling and flagged ``approximate``.
    """
    d = obj.dimension
    is_global = isinstance(box, str)
    if is_global and box != "global":
        raise ValueError(f"unknown box specifier {box!r}")
    arr = None if is_global else _as_box(box, d)

    if obj.kind == "trigonometric":
        c = np.asarray(obj.params["amplitudes"], dtype=float)
        return DerivativeBounds(float(np.sqrt(np.sum(c * c))), float(c.max()), float(c.max()), arr)

    if obj.kind == "quadratic" and obj.diag is not None:
        if arr is None:
            raise UnsupportedBoundsError(
                "a quadratic has unbounded gradient on R^d, so global bounds "
                "(B0, B1, B2) do not exist; pass a finite box")
        q = obj.diag
        far = np.maximum(np.abs(arr[:, 0] - obj.center), np.abs(arr[:, 1] - obj.center))
        return DerivativeBounds(float(np.sqrt(np.sum((q * far) ** 2))),
                                float(np.max(np.abs(q))), 0.0, arr)

    if arr is None:
        raise UnsupportedBoundsError("sampled bounds need a finite box")
    return _sampled_bounds(obj, arr, n_samples, seed)


def _sampled_bounds(obj: ObjectiveSpec, box: Array, n: int, seed: int) -> DerivativeBounds:
    d = obj.dimension
    rng = np.random.default_rng(seed)
    pts = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((n, d))
    b0 = float(np.max(np.linalg.norm(obj.grad(pts), axis=-1)))
    eye = np.eye(d)
    hess = np.stack([obj.hess_vec(pts, np.broadcast_to(e, pts.shape)) for e in eye], axis=-1)
    b1 = float(np.max(np.linalg.norm(hess, ord=2, axis=(-2, -1))))
    # third derivative via difference quotients of the Hessian along random unit directions
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    eps = 1e-4 * (1.0 + np.linalg.norm(pts, axis=-1, keepdims=True))
    hess2 = np.stack([obj.hess_vec(pts + eps * dirs, np.broadcast_to(e, pts.shape)) for e in eye],
                     axis=-1)
    b2 = float(np.max(np.linalg.norm((hess2 - hess) / eps[..., None], ord=2, axis=(-2, -1))))
    return DerivativeBounds(b0, b1, b2, box, approximate=True)


def modified_grad(obj: ObjectiveSpec, c: float, h: float, u: Array) -> Array:
    """Gradient of Phi_h = Phi + (h c / 2) |grad Phi|^2."""
    if h < 0:
        raise ValueError("h must be nonnegative")
    g = obj.grad(u)
    if h == 0:
        return g
    return g + h * c * obj.hess_vec(u, g)


def fd_gradient(fun: Callable[[Array], Array], u: Array) -> Array:
    """Central-difference gradient of a scalar function, step 1e-5 (1 + |u|)."""
    u = np.asarray(u, dtype=float)
    step = 1e-5 * (1.0 + np.linalg.norm(u))
    out = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step
        out[i] = (fun(u + e) - fun(u - e)) / (2 * step)
    return out


def check_gradient(obj: ObjectiveSpec, points: Array) -> float:
    """Largest ``|grad - FD(phi)| / (1 + |grad|)`` over the given points."""
    worst = 0.0
    for u in np.atleast_2d(points):
        g = obj.grad(u)
        err = np.linalg.norm(g - fd_gradient(obj.phi, u)) / (1.0 + np.linalg.norm(g))
        worst = max(worst, float(err))
    return worst


def condition_number(obj: ObjectiveSpec) -> float:
    if not obj.is_diagonal_quadratic:
        raise ValueError("condition number is defined here for diagonal quadratics only")
    q = np.abs(obj.diag)
    return float(q.max() / q.min())


def objective_from_config(kind: str, params: dict) -> ObjectiveSpec:
    """Build an objective from a config entry such as ``quadratic: {kappa: 20, d: 2}``."""
    if kind == "quadratic":
        return make_quadratic(params["kappa"], params["d"], params.get("center"))
    if kind == "trigonometric":
        return make_trigonometric(params["d"], params.get("amplitudes", 1.0))
    raise ValueError(f"unknown objective kind {kind!r}")


__all__ = [
    "ObjectiveSpec", "DerivativeBounds", "UnsupportedBoundsError", "make_quadratic",
    "make_diagonal_quadratic", "make_trigonometric", "make_composite", "derivative_bounds",
    "modified_grad", "fd_gradient", "check_gradient", "condition_number",
    "objective_from_config",
]
