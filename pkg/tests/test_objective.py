import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from momlab.objective import (
    UnsupportedBoundsError,
    check_gradient,
    condition_number,
    derivative_bounds,
    make_composite,
    make_diagonal_quadratic,
    make_quadratic,
    make_trigonometric,
    modified_grad,
    objective_from_config,
)
from momlab.flows import c_coefficient


def test_identity_quadratic():
    obj = make_quadratic(1, 2)
    assert np.array_equal(obj.diag, [1.0, 1.0])
    assert obj.phi(np.array([1.0, 1.0])) == 1.0


def test_kappa_20_is_diag_20_1():
    obj = make_quadratic(20, 2)
    assert np.array_equal(obj.diag, [20.0, 1.0])
    assert condition_number(obj) == 20.0


def test_quadratic_grad_by_hand():
    assert np.array_equal(make_quadratic(5, 2).grad(np.array([1.0, 2.0])), [5.0, 2.0])


@pytest.mark.parametrize("kappa,d", [(0.5, 2), (2, 0)])
def test_quadratic_rejects_bad_arguments(kappa, d):
    with pytest.raises(ValueError):
        make_quadratic(kappa, d)


@given(st.floats(1.0, 1e4), st.integers(1, 6))
def test_condition_number_is_exact(kappa, d):
    obj = make_quadratic(kappa, d)
    if d > 1:
        assert condition_number(obj) == kappa
        assert np.all(np.diff(obj.diag) <= 0)


def test_trigonometric_values():
    obj = make_trigonometric(1, 1.0)
    assert obj.phi(np.zeros(1)) == 0.0
    assert obj.grad(np.zeros(1))[0] == 0.0
    assert obj.grad(np.array([math.pi / 2]))[0] == pytest.approx(1.0, abs=1e-15)


def test_trigonometric_global_bounds():
    b = derivative_bounds(make_trigonometric(2, [1.0, 1.0]))
    assert (b.B0, b.B1, b.B2) == (pytest.approx(math.sqrt(2)), 1.0, 1.0)
    b1 = derivative_bounds(make_trigonometric(1, 1.0))
    assert (b1.B0, b1.B1, b1.B2) == (1.0, 1.0, 1.0)


def test_quadratic_box_bounds():
    b = derivative_bounds(make_diagonal_quadratic([1.0, 1.0]), [[-1, 1], [-1, 1]])
    assert b.B0 == pytest.approx(math.sqrt(2))
    assert (b.B1, b.B2) == (1.0, 0.0)


def test_quadratic_global_bounds_unsupported():
    with pytest.raises(UnsupportedBoundsError, match="do not exist"):
        derivative_bounds(make_quadratic(5, 2))


def test_sampled_bounds_dominate_samples_and_are_flagged():
    obj = make_composite(make_quadratic(3, 2), make_trigonometric(2, 0.5))
    box = np.array([[-1.0, 1.0], [-2.0, 0.5]])
    b = derivative_bounds(obj, box)
    assert b.approximate
    rng = np.random.default_rng(7)
    pts = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((500, 2))
    assert np.linalg.norm(obj.grad(pts), axis=-1).max() <= b.B0 * (1 + 1e-9) + 1e-3


def test_modified_grad_examples():
    obj = make_diagonal_quadratic([1.0])
    u = np.array([1.0])
    assert np.array_equal(modified_grad(obj, 105.0, 0.0, u), obj.grad(u))
    assert modified_grad(obj, 105.0, 0.01, u)[0] == pytest.approx(2.05, rel=1e-14)
    assert np.all(modified_grad(obj, 105.0, 0.01, np.zeros(1)) == 0.0)


def test_modified_grad_is_gradient_of_modified_potential():
    obj = make_trigonometric(2, [1.0, 0.3])
    c, h = 3.0, 0.1

    def phi_h(u):
        g = obj.grad(u)
        return obj.phi(u) + 0.5 * h * c * np.dot(g, g)

    from momlab.objective import fd_gradient
    u = np.array([0.4, -1.1])
    np.testing.assert_allclose(modified_grad(obj, c, h, u), fd_gradient(phi_h, u), rtol=1e-7)


OBJECTIVES = [
    make_quadratic(10, 3),
    make_diagonal_quadratic([2.0, 0.5], center=[1.0, -1.0]),
    make_trigonometric(3, [1.0, 0.5, 2.0]),
    make_composite(make_quadratic(4, 2), make_trigonometric(2, 1.0)),
]


@pytest.mark.parametrize("obj", OBJECTIVES)
def test_gradient_check_on_seeded_points(obj):
    pts = np.random.default_rng(0).uniform(-2, 2, size=(100, obj.dimension))
    assert check_gradient(obj, pts) < 1e-5


@pytest.mark.parametrize("obj", OBJECTIVES)
def test_hess_vec_matches_directional_difference_and_is_symmetric(obj):
    rng = np.random.default_rng(1)
    for _ in range(20):
        u, w1, w2 = rng.normal(size=(3, obj.dimension))
        eps = 1e-6 * (1 + np.linalg.norm(u))
        fd = (obj.grad(u + eps * w1) - obj.grad(u - eps * w1)) / (2 * eps)
        hv = obj.hess_vec(u, w1)
        assert np.linalg.norm(hv - fd) <= 1e-5 * (1 + np.linalg.norm(hv))
        assert abs(w2 @ obj.hess_vec(u, w1) - w1 @ obj.hess_vec(u, w2)) < 1e-10


@given(st.floats(0.05, 0.95), st.floats(0.0, 1.0), st.floats(0.0, 0.5))
def test_modified_grad_shares_critical_points(lam, a, h):
    obj = make_trigonometric(2, [1.0, 2.0])
    u = np.array([0.0, math.pi])
    assert np.linalg.norm(obj.grad(u)) < 1e-12
    assert np.linalg.norm(modified_grad(obj, c_coefficient(lam, a), h, u)) < 1e-10


def test_objective_from_config():
    obj = objective_from_config("quadratic", {"kappa": 20, "d": 2})
    assert np.array_equal(obj.diag, [20.0, 1.0])
    with pytest.raises(ValueError):
        objective_from_config("rosenbrock", {})
