import math

import numpy as np
import pytest

from momlab.analysis import fitted_order, sup_error
from momlab.flows import (
    alpha_of,
    beta_init,
    beta_init_matched,
    c_coefficient,
    c_coefficient_matched,
    damped_linear,
    exponential_path,
    modified_operator_residual,
    polynomial_path,
    sine_path,
    solve_modified_flow,
    solve_rgf,
    solve_visco,
    solve_wilson_ode,
)
from momlab.integrate import integrate_verified
from momlab.schemes import run_hb
from momlab.objective import make_diagonal_quadratic, make_quadratic, make_trigonometric

ONE_D = make_diagonal_quadratic([1.0])
FLAT = make_diagonal_quadratic([0.0, 0.0])


def test_rgf_closed_form_value():
    assert solve_rgf(ONE_D, 0.5, [1.0], 1.0).sample(0.1)[0] == pytest.approx(math.exp(-0.2), rel=1e-15)
    assert solve_rgf(ONE_D, 0.5, [1.0], 1.0).sample(0.1)[0] == pytest.approx(0.818731, abs=1e-6)


def test_rgf_initial_value_and_equilibrium():
    sol = solve_rgf(make_trigonometric(2, 1.0), 0.9, [0.3, -0.2], 2.0)
    assert np.allclose(sol.sample(0.0), [0.3, -0.2], atol=1e-14)
    still = solve_rgf(make_trigonometric(2, 1.0), 0.9, [0.0, math.pi], 2.0)
    assert np.allclose(still.sample(np.linspace(0, 2, 9)), [0.0, math.pi], atol=1e-14)


def test_rgf_time_rescaling_integrated():
    obj, lam = make_trigonometric(2, [1.0, 0.4]), 0.8
    fast = solve_rgf(obj, lam, [2.0, 1.0], 1.0, rtol=1e-12)
    slow = solve_rgf(obj, 1e-300, [2.0, 1.0], 5.0, rtol=1e-12)
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(fast.sample(t), slow.sample(t / (1 - lam)), atol=1e-9)


def test_sample_outside_horizon_raises():
    with pytest.raises(ValueError):
        solve_rgf(ONE_D, 0.5, [1.0], 1.0).sample(1.5)


def test_alpha_and_beta():
    assert alpha_of(0.9, 0.0) == pytest.approx(0.95)
    assert alpha_of(0.9, 0.9) == pytest.approx(0.86)
    assert alpha_of(0.9, 0.9) < alpha_of(0.9, 0.0)
    assert beta_init(ONE_D, 0.9, 0.0, [1.0])[0] == pytest.approx(-0.45 * -1.0)


def test_visco_rejects_nonpositive_alpha():
    with pytest.raises(ValueError):
        solve_visco(ONE_D, 0.5, 2.0, 0.01, [1.0])


def test_visco_warns_for_large_h():
    with pytest.warns(RuntimeWarning):
        solve_visco(make_quadratic(20, 2), 0.9, 0.0, 2.0 ** -4, [1.0, 1.0], T=0.5)


def test_visco_oscillatory_discriminant():
    lam, a, h, q = 0.9, 0.0, 2.0 ** -6, 1.0
    assert (1 - lam) ** 2 < 4 * h * alpha_of(lam, a) * q
    sol = solve_visco(ONE_D, lam, a, h, [1.0], T=1.0)
    v = sol.velocity(np.linspace(0, 1, 2001))[:, 0]
    assert np.any(np.diff(np.sign(v)) != 0)


def test_visco_free_particle():
    lam, a, h = 0.9, 0.0, 0.01
    alpha = alpha_of(lam, a)
    up0 = np.array([0.7, -0.2])
    sol = solve_visco(FLAT, lam, a, h, [1.0, 2.0], up0, T=1.0)
    t = np.linspace(0, 1, 7)
    tau = h * alpha / (1 - lam)
    expect = np.array([1.0, 2.0]) + tau * (1 - np.exp(-t / tau))[:, None] * up0
    np.testing.assert_allclose(sol.sample(t), expect, atol=1e-14)


@pytest.mark.parametrize("kappa,a", [(5, 0.0), (20, 0.9), (1, 0.0)])
def test_visco_closed_form_matches_integration(kappa, a):
    obj = make_quadratic(kappa, 2)
    h = 2.0 ** -5
    with pytest.warns(RuntimeWarning) if h > 0.01 / (2 * alpha_of(0.9, a) * kappa) else _nowarn():
        closed = solve_visco(obj, 0.9, a, h, [1.0, 1.0], T=2.0)
        num = solve_visco(obj, 0.9, a, h, [1.0, 1.0], T=2.0, force_integrate=True)
    t = np.arange(0, 2.0 + 1e-12, h)
    assert np.max(np.abs(closed.sample(t) - num.sample(t))) < 1e-8
    assert np.max(np.abs(closed.velocity(t) - num.velocity(t))) < 1e-6 * (1 + kappa)


class _nowarn:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_damped_linear_against_ode_residual():
    t = np.linspace(0, 3, 301)
    for m, b, q in [(0.01, 0.1, 1.0), (0.5, 1.0, 0.5), (1.0, 2.0, 1.0), (1e-3, 1.0, 20.0)]:
        y, yp = damped_linear(m, b, np.array([q]), np.array([1.0]), np.array([-0.3]), t)
        assert y[0, 0] == pytest.approx(1.0) and yp[0, 0] == pytest.approx(-0.3)
        # derivative consistency via a centred difference of the closed form
        dt = 1e-6
        y2, _ = damped_linear(m, b, np.array([q]), np.array([1.0]), np.array([-0.3]), t + dt)
        y1, _ = damped_linear(m, b, np.array([q]), np.array([1.0]), np.array([-0.3]),
                              np.maximum(t - dt, 0))
        inner = slice(1, None)
        fd = (y2 - y1)[inner] / (2 * dt)
        assert np.max(np.abs(fd - yp[inner])) < 1e-4 * (1 + np.max(np.abs(yp)))


def test_visco_energy_is_nonincreasing():
    obj, lam, a, h = make_quadratic(10, 2), 0.9, 0.0, 2.0 ** -7
    sol = solve_visco(obj, lam, a, h, [1.0, 1.0], T=3.0)
    t = np.linspace(0, 3, 3001)
    u, v = sol.sample(t), sol.velocity(t)
    energy = 0.5 * h * alpha_of(lam, a) * np.sum(v * v, axis=1) + obj.phi(u)
    assert np.all(np.diff(energy) <= 1e-9)


def test_visco_second_derivative_scales_like_inverse_h():
    obj, lam, a = make_quadratic(5, 2), 0.9, 0.0
    hs = [2.0 ** -k for k in range(6, 10)]
    early, late = [], []
    for h in hs:
        sol = solve_visco(obj, lam, a, h, [1.0, 1.0], T=2.0)
        acc = lambda t: (-obj.grad(sol.sample(t)) - (1 - lam) * sol.velocity(t)) / (h * alpha_of(lam, a))
        early.append(np.linalg.norm(acc(0.0)))
        late.append(np.max(np.linalg.norm(acc(np.linspace(1.0, 2.0, 50)), axis=-1)))
    assert fitted_order(hs, early) == pytest.approx(-1.0, abs=0.2)
    # away from t = 0 the acceleration does not grow as h shrinks
    assert all(x <= late[0] * 1.01 for x in late)


def test_visco_tends_to_rgf_as_h_shrinks():
    obj = make_quadratic(5, 2)
    t = np.linspace(0, 1, 101)
    ref = solve_rgf(obj, 0.9, [1.0, 1.0], 1.0).sample(t)
    gaps = [np.max(np.abs(solve_visco(obj, 0.9, 0.0, h, [1.0, 1.0], T=1.0).sample(t) - ref))
            for h in (2.0 ** -12, 2.0 ** -13, 2.0 ** -14)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_c_coefficient():
    assert c_coefficient(0.9, 0.0) == pytest.approx(105.0)
    assert c_coefficient(0.9, 0.9) == pytest.approx(96.0)
    assert c_coefficient(0.5, 2.5) == pytest.approx(0.0)
    assert c_coefficient_matched(0.9, 0.0) == pytest.approx(95.0)


def test_modified_flow_examples():
    obj = ONE_D
    sol = solve_modified_flow(obj, 0.9, 0.0, 0.01, [1.0], 0.2, closed_form=True)
    assert sol.sample(0.1)[0] == pytest.approx(math.exp(-20.5 * 0.1), rel=1e-14)
    num = solve_modified_flow(obj, 0.9, 0.0, 0.01, [1.0], 0.2, rtol=1e-12)
    assert num.sample(0.1)[0] == pytest.approx(math.exp(-2.05), rel=1e-9)
    trig = make_trigonometric(2, [1.0, 0.5])
    a = solve_modified_flow(trig, 0.5, 0.0, 0.0, [1.0, -1.0], 1.0, rtol=1e-12)
    b = solve_rgf(trig, 0.5, [1.0, -1.0], 1.0, rtol=1e-12)
    t = np.linspace(0, 1, 21)
    np.testing.assert_allclose(a.sample(t), b.sample(t), atol=1e-12)
    still = solve_modified_flow(trig, 0.5, 0.0, 0.1, [0.0, 0.0], 1.0)
    assert np.allclose(still.sample(t), 0.0)


def test_wilson_ode():
    mu = 1.0
    free = solve_wilson_ode(FLAT, mu, [1.0, 0.0], [0.5, -1.0], T=2.0, rtol=1e-12)
    t = np.linspace(0, 2, 9)
    expect = np.array([1.0, 0.0]) + np.outer(1 - np.exp(-2 * t), [0.5, -1.0]) / 2
    np.testing.assert_allclose(free.sample(t), expect, atol=1e-10)
    crit = solve_wilson_ode(ONE_D, mu, [1.0], [0.0], T=3.0, rtol=1e-12)
    np.testing.assert_allclose(crit.sample(t)[:, 0], (1 + t) * np.exp(-t), atol=1e-10)
    with pytest.raises(ValueError):
        solve_wilson_ode(ONE_D, 0.0, [1.0])


def test_richardson_accuracy_claim():
    sol = solve_rgf(make_trigonometric(2, 1.0), 0.5, [1.0, 2.0], 3.0, rtol=1e-10)
    assert sol.provenance == "integrated"
    assert sol.accuracy < 1e-9 * (1 + 2.3)


def test_integrate_verified_align():
    path = integrate_verified(lambda y: -y, np.array([1.0]), 1.0, 0.01, align=0.125)
    assert np.any(np.isclose(path.times, 0.375, rtol=0, atol=1e-15))
    assert abs(path.states[-1, 0] - math.exp(-1)) < 1e-10


@pytest.mark.parametrize("p", [1, 2, 3])
def test_modified_residual_orders(p):
    hs = [2.0 ** -k for k in range(4, 10)]
    for path in (exponential_path(-1.0), sine_path(1.3)):
        res = [np.abs(modified_operator_residual(ONE_D, 0.5, p, h, path, 0.7)).max() for h in hs]
        assert fitted_order(hs, res) == pytest.approx(p + 1, abs=0.15)


def test_modified_residual_vanishes_on_linear_path():
    res = modified_operator_residual(ONE_D, 0.5, 1, 0.1, polynomial_path([0.3, 2.0]), 0.4)
    assert np.all(np.abs(res) < 1e-15)
    with pytest.raises(ValueError):
        modified_operator_residual(ONE_D, 0.5, 4, 0.1, polynomial_path([0.0, 1.0]), 0.4)


@pytest.mark.parametrize("lam, a", [(0.9, 0.0), (0.9, 0.9), (0.5, 0.2)])
def test_matched_beta_reproduces_first_step_taylor(lam, a):
    obj = make_trigonometric(2, [0.5, 0.25])
    u0, h = np.array([1.0, 0.3]), 2.0 ** -5
    up = beta_init_matched(obj, lam, a, u0)
    upp = (obj.force(u0) - (1 - lam) * up) / (h * alpha_of(lam, a))
    np.testing.assert_allclose(u0 + h * up + 0.5 * h * h * upp, u0 + h * obj.force(u0), atol=1e-14)
    if a == 0.0:
        np.testing.assert_allclose(up, 0.5 * obj.force(u0), rtol=1e-14)


def test_matched_beta_tracks_hb_transient_closer():
    obj = make_quadratic(20, 2)
    h = 2.0 ** -4
    traj = run_hb(obj, 0.9, h, [1.0, 1.0], 8)
    errs = {}
    with pytest.warns(RuntimeWarning):
        for key in ("beta-default", "beta-matched"):
            sol = solve_visco(obj, 0.9, 0.0, h, [1.0, 1.0], key, T=0.5)
            errs[key] = sup_error(traj, sol, 0.5)
    assert errs["beta-matched"] < 0.5 * errs["beta-default"]
    with pytest.raises(ValueError):
        solve_visco(obj, 0.9, 0.0, h, [1.0, 1.0], "beta-other", T=0.5)
