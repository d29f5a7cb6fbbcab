import numpy as np
import pytest

from helpers import never_crossing_spec, scalar_spec
from meantau.portfolio import branch_coefficient
from meantau.problem import (
    ControlPolicy,
    ControlSegment,
    ControlSet,
    CostSpec,
    ProblemSpec,
)
from meantau.smp import check_candidate, control_samples, terminal_cost_drift


def test_terminal_cost_drift_linear_terminal():
    spec = scalar_spec(a=0.5, b=1.0, d_coef=0.1)
    cost = CostSpec(kappa=0.0, c_lin=[0.0], Lambda=[[0.0]], psi_lin=[2.0], psi_quad=[[0.0]])
    x = np.array([[1.0], [2.0]])
    out = terminal_cost_drift(x, [0.6], spec.dynamics, cost)
    np.testing.assert_allclose(out, [2.0 * 1.1, 2.0 * 1.6], atol=1e-14)


def test_terminal_cost_drift_quadratic_adds_noise_correction():
    spec = scalar_spec(a=0.5, b=1.0, d_coef=0.1)
    cost = CostSpec(kappa=0.0, c_lin=[0.0], Lambda=[[0.0]], psi_lin=[2.0], psi_quad=[[3.0]])
    x = np.array([[1.0], [2.0]])
    out = terminal_cost_drift(x, [0.6], spec.dynamics, cost)
    # gradient (2 + 3x) times drift, plus half sigma' psi_quad sigma with sigma = 0.06
    expected = np.array([(2 + 3 * 1.0) * 1.1, (2 + 3 * 2.0) * 1.6]) + 0.5 * 0.06 * 3.0 * 0.06
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_control_samples_one_axis_is_the_full_grid():
    box = ControlSet([0.0], [1.0])
    samples = control_samples(box, per_axis=5)
    assert samples.shape == (5, 1)
    np.testing.assert_allclose(samples[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])


def test_control_samples_two_axis_lattice():
    box = ControlSet([0.0, -1.0], [1.0, 1.0])
    samples = control_samples(box, per_axis=7)
    assert samples.shape == (49, 2)
    assert np.all(samples[:, 0] >= 0.0) and np.all(samples[:, 1] >= -1.0)


def test_control_samples_three_axis_keeps_all_corners():
    box = ControlSet([0.0, 0.0, 0.0], [1.0, 2.0, 3.0])
    samples = control_samples(box, per_axis=5)
    assert samples.shape[1] == 3
    got = {tuple(row) for row in samples}
    for cx in (0.0, 1.0):
        for cy in (0.0, 2.0):
            for cz in (0.0, 3.0):
                assert (cx, cy, cz) in got


def test_check_candidate_passes_on_wealth_optimum(
    params, tau_solution, wealth_spec, wealth_policy
):
    report = check_candidate(
        wealth_spec,
        wealth_policy,
        tau=tau_solution.tau,
        case_label="i",
        t_grid_size=512,
        u_samples_per_axis=33,
    )
    assert report.passed
    assert report.max_residual <= 1e-8
    assert abs(report.slope_at_tau + 1.0) < 1e-6
    # expected running cost at the hit: 1 + lam u^2 / 2 with u = 10
    assert abs(report.terminal_weight - 17.0 / 12.0) < 1e-6
    assert set(report.variants) == {"full"}
    assert report.n_time_nodes == 513
    assert report.n_control_samples == 33


def test_check_candidate_flags_a_bumped_policy(params, tau_solution, wealth_spec):
    sol = tau_solution
    coef = branch_coefficient(params)
    r = params.rate
    bumped = ControlPolicy(
        [
            ControlSegment.constant(0.0, 2.0, [12.5]),
            ControlSegment.constant(2.0, 3.0, [12.8]),
            ControlSegment.constant(3.0, sol.t1, [12.5]),
            ControlSegment.scaled_exp(
                sol.t1, sol.t2, [0.0], [coef * np.exp(r * sol.tau)], [-r]
            ),
            ControlSegment.constant(sol.t2, sol.tau, [10.0]),
            ControlSegment.constant(sol.tau, params.horizon, [10.0]),
        ]
    )
    report = check_candidate(
        wealth_spec,
        bumped,
        tau=sol.tau,
        case_label="i",
        t_grid_size=1024,
        u_samples_per_axis=51,
    )
    assert not report.passed
    assert report.max_residual > 1e-4
    assert 2.0 <= report.witness_t <= 3.0
    # pushing u past the box top makes a move back toward the bottom improving
    assert float(report.witness_u[0]) == 10.0


def test_check_candidate_cap_case_tests_only_the_drift_part():
    spec = never_crossing_spec(horizon=1.0)
    policy = ControlPolicy.constant([0.5], 1.0)
    report = check_candidate(spec, policy, t_grid_size=128, detection_steps=2048)
    assert report.case_label == "ii"
    assert report.tau == 1.0
    assert set(report.variants) == {"drift_only"}
    # time-optimal cost has no control gradient, so the residual vanishes
    assert report.max_residual == 0.0
    assert report.passed
    assert np.isnan(report.slope_at_tau)
    assert np.isnan(report.terminal_weight)


def test_check_candidate_trivial_when_already_at_the_level():
    spec = scalar_spec(y0=0.0)
    report = check_candidate(
        spec, ControlPolicy.constant([0.8], 6.0), t_grid_size=64, detection_steps=512
    )
    assert report.tau == 0.0
    assert report.passed
    assert report.n_time_nodes == 0
    assert report.witness_u.size == 0


def test_check_candidate_requires_tau_and_label_together():
    spec = scalar_spec()
    policy = ControlPolicy.constant([0.8], 6.0)
    with pytest.raises(ValueError, match="together or neither"):
        check_candidate(spec, policy, tau=1.0)
    with pytest.raises(ValueError, match="together or neither"):
        check_candidate(spec, policy, case_label="i")


def test_check_candidate_quadratic_terminal_needs_sampled_states(
    tau_solution, wealth_spec, wealth_policy
):
    cost = CostSpec(
        kappa=1.0,
        c_lin=[0.0],
        Lambda=wealth_spec.cost.Lambda,
        psi_lin=[0.0],
        psi_quad=[[0.2]],
    )
    spec = ProblemSpec(
        wealth_spec.dynamics,
        wealth_spec.target,
        cost,
        wealth_spec.control_set,
        wealth_spec.horizon,
    )
    with pytest.raises(ValueError, match="terminal_x_paths"):
        check_candidate(
            spec,
            wealth_policy,
            tau=tau_solution.tau,
            case_label="i",
            t_grid_size=64,
            u_samples_per_axis=9,
        )
    report = check_candidate(
        spec,
        wealth_policy,
        tau=tau_solution.tau,
        case_label="i",
        t_grid_size=64,
        u_samples_per_axis=9,
        terminal_x_paths=np.full((32, 1), 10.0),
    )
    assert np.isfinite(report.terminal_weight)
    assert report.n_control_samples == 9
