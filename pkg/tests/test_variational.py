import numpy as np
import pytest

from helpers import never_crossing_spec, piecewise_constant, scalar_spec
from meantau.problem import ControlPolicy
from meantau.simulate import HookDynamics, SimGrid
from meantau.variational import (
    PerturbationSpec,
    _em_paths,
    dual_identity_check,
    fd_state_check,
    fd_tau_check,
    hit_time_derivative,
    mean_target_response,
    simulate_state_sensitivity,
)


def bilinear_hook(x0=1.0):
    """Scalar drift 0.4 x u with state-proportional noise 0.3 x."""

    def drift(X, u):
        return 0.4 * X * u[0]

    def diffusion(X, u):
        return 0.3 * X[:, :, None]

    return HookDynamics(
        m=1,
        k=1,
        d=1,
        x0=[x0],
        drift=drift,
        diffusion=diffusion,
        drift_dstate=lambda X, u, S: 0.4 * S * u[0],
        drift_dcontrol=lambda X, u, v: 0.4 * X * v[0],
        diffusion_dstate=lambda X, u, S: 0.3 * S[:, :, None],
        diffusion_dcontrol=lambda X, u, v: np.zeros((1, 1)),
    )


def test_zero_direction_gives_zero_sensitivity():
    spec = scalar_spec(c_coef=0.2, d_coef=0.1)
    grid = SimGrid(1.0, 50)
    res = simulate_state_sensitivity(
        spec,
        ControlPolicy.constant([0.8], 6.0),
        ControlPolicy.constant([0.0], 6.0),
        grid,
        seed=3,
        n_paths=16,
    )
    assert np.max(np.abs(res.paths)) == 0.0
    np.testing.assert_allclose(res.mean_exact, 0.0)


def test_linear_dynamics_make_the_quotient_exact():
    # for linear coefficients the perturbed path is the base path plus
    # rho times the sensitivity, pathwise, so the gap is pure round-off
    spec = scalar_spec(a=0.5, b=1.0, c_coef=0.3, d_coef=0.2)
    grid = SimGrid(1.0, 100)
    policy = ControlPolicy.constant([0.8], 6.0)
    direction = piecewise_constant([0.5, -0.3], [0.0, 0.5, 6.0])
    rows = fd_state_check(
        spec, policy, direction, rhos=(1e-2, 1e-3), grid=grid, seed=11, n_paths=32
    )
    for row in rows:
        assert row.sup_err < 1e-9


def test_bilinear_coefficients_converge_at_first_order():
    spec = scalar_spec()  # the box and horizon; dynamics overridden by the hook
    hook = bilinear_hook()
    grid = SimGrid(1.0, 200)
    policy = ControlPolicy.constant([0.8], 6.0)
    direction = ControlPolicy.constant([0.5], 6.0)
    rows = fd_state_check(
        spec,
        policy,
        direction,
        rhos=(1e-1, 1e-2, 1e-3),
        grid=grid,
        seed=4,
        n_paths=400,
        dynamics=hook,
    )
    errs = [r.sup_err for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert 4.0 < errs[0] / errs[1] < 25.0
    assert 4.0 < errs[1] / errs[2] < 25.0


def test_decoupled_noise_destroys_the_quotient():
    # the convergence above depends on shared Brownian increments; with
    # fresh noise for the perturbed ensemble the quotient blows up as 1/rho
    spec = scalar_spec(a=0.5, b=1.0, c_coef=0.3, d_coef=0.2)
    grid = SimGrid(1.0, 100)
    policy = ControlPolicy.constant([0.8], 6.0)
    rho = 1e-3
    base = _em_paths(spec.dynamics, policy, grid, seed=11, n_paths=32)
    from meantau.problem import perturbed_policy

    direction = ControlPolicy.constant([0.5], 6.0)
    pert_same = _em_paths(
        spec.dynamics, perturbed_policy(policy, direction, rho), grid, seed=11, n_paths=32
    )
    pert_other = _em_paths(
        spec.dynamics, perturbed_policy(policy, direction, rho), grid, seed=99, n_paths=32
    )
    coupled = np.max(np.abs(pert_same - base)) / rho
    decoupled = np.max(np.abs(pert_other - base)) / rho
    assert decoupled > 50.0 * coupled


def test_mean_target_response_wealth_coefficients(wealth_spec):
    # with E2 = -r and E4 = -(growth - rate) the response is -r E[y] - (growth - rate)
    ey = np.array([[0.0], [1.0], [2.0]])
    v = np.array([[1.0], [1.0], [1.0]])
    out = mean_target_response(ey, v, wealth_spec.target, wealth_spec.dynamics)
    np.testing.assert_allclose(out, -0.05 * ey[:, 0] - 0.05, atol=1e-15)


def test_response_matches_finite_difference_of_the_mean_rate():
    spec = scalar_spec(a=0.3, b=0.9, e1=0.1, e2=-0.8, e3=0.2, e4=0.3, y0=2.0)
    grid = SimGrid(2.0, 2000)
    policy = ControlPolicy.constant([0.8], 6.0)
    direction = ControlPolicy.constant([0.4], 6.0)
    from meantau.simulate import mean_ode_solve
    from meantau.problem import perturbed_policy, target_control_row, target_state_row

    ts = grid.times()
    rho = 1e-6
    row_x = target_state_row(spec.target, spec.dynamics)
    row_u = target_control_row(spec.target, spec.dynamics)

    def rate(pol):
        mx = mean_ode_solve(spec.dynamics, pol, grid)
        return mx @ row_x + pol.values(ts, side=+1) @ row_u

    fd = (rate(perturbed_policy(policy, direction, rho)) - rate(policy)) / rho
    ey = simulate_state_sensitivity(spec, policy, direction, grid, 0, 2).mean_exact
    formula = mean_target_response(ey, direction.values(ts, side=+1), spec.target, spec.dynamics)
    assert np.max(np.abs(fd - formula)) < 1e-6


def test_hit_time_derivative_interior_case():
    spec = scalar_spec(a=0.3, b=1.0, e2=-1.0, e4=0.4, y0=2.0, horizon=6.0)
    grid = SimGrid(6.0, 30_000)
    policy = ControlPolicy.constant([0.8], 6.0)
    direction = ControlPolicy.constant([0.5], 6.0)
    deriv = hit_time_derivative(spec, policy, direction, grid)
    assert deriv.case_label == "i"
    assert deriv.slope_at_tau < 0.0
    assert np.isfinite(deriv.value)
    report = fd_tau_check(spec, policy, direction, rhos=(1e-2, 1e-3), grid=grid)
    gaps = [r.rel_gap for r in report.rows]
    assert gaps[1] < gaps[0]
    assert gaps[1] < 5e-3


def test_hit_time_derivative_at_the_cap_is_zero():
    spec = never_crossing_spec(horizon=1.0)
    grid = SimGrid(1.0, 500)
    policy = ControlPolicy.constant([0.5], 1.0)
    direction = ControlPolicy.constant([0.2], 1.0)
    deriv = hit_time_derivative(spec, policy, direction, grid)
    assert deriv.case_label == "ii"
    assert deriv.value == 0.0
    assert np.isnan(deriv.slope_at_tau)
    report = fd_tau_check(spec, policy, direction, rhos=(1e-2, 1e-3), grid=grid)
    for row in report.rows:
        assert row.quotient == 0.0
        assert row.abs_gap == 0.0


def test_dual_identity_on_scalar_problem():
    spec = scalar_spec(a=0.3, b=1.0, e2=-1.0, e4=0.4, y0=2.0, horizon=6.0)
    grid = SimGrid(6.0, 6000)
    policy = piecewise_constant([0.8, 1.2], [0.0, 2.0, 6.0])
    direction = piecewise_constant([0.5, -0.2, 0.1], [0.0, 1.0, 3.0, 6.0])
    report = dual_identity_check(spec, policy, direction, grid)
    assert report.rel_gap < 1e-6
    assert report.response_integral != 0.0


def test_dual_identity_zero_direction():
    spec = scalar_spec(a=0.3, b=1.0, e2=-1.0, e4=0.4, y0=2.0, horizon=6.0)
    grid = SimGrid(6.0, 4000)
    policy = ControlPolicy.constant([0.8], 6.0)
    report = dual_identity_check(spec, policy, ControlPolicy.constant([0.0], 6.0), grid)
    assert report.response_integral == pytest.approx(0.0, abs=1e-15)
    assert report.adjoint_integral == pytest.approx(0.0, abs=1e-15)
    assert report.rel_gap == pytest.approx(0.0, abs=1e-15)


def test_dual_identity_requires_an_interior_hit():
    spec = never_crossing_spec()
    with pytest.raises(ValueError):
        dual_identity_check(
            spec,
            ControlPolicy.constant([0.5], 1.0),
            ControlPolicy.constant([0.1], 1.0),
            SimGrid(1.0, 100),
        )


def test_perturbation_admissibility():
    spec = scalar_spec(lower=0.2, upper=1.5)
    interior = ControlPolicy.constant([0.8], 6.0)
    at_edge = ControlPolicy.constant([1.5], 6.0)
    up = ControlPolicy.constant([1.0], 6.0)
    pert = PerturbationSpec(direction=up, rhos=(1e-2, 1e-3))
    assert pert.validate(spec, interior).ok
    bad = pert.validate(spec, at_edge)
    assert not bad.ok
    assert any("leaves the box" in v for v in bad.violations)


def test_perturbation_rejects_horizon_mismatch_and_bad_steps():
    spec = scalar_spec()
    policy = ControlPolicy.constant([0.8], 6.0)
    short = ControlPolicy.constant([0.1], 3.0)
    report = PerturbationSpec(direction=short).validate(spec, policy)
    assert not report.ok and any("horizon" in v for v in report.violations)
    report = PerturbationSpec(
        direction=ControlPolicy.constant([0.0], 6.0), rhos=(1e-2, -1.0)
    ).validate(spec, policy)
    assert not report.ok and any("positive" in v for v in report.violations)
