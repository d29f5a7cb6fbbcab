"""First-order expansions and the checks built on them.

Perturbing an admissible control along a direction v produces three
verifiable first-order objects:

* the state sensitivity process, driven by the coefficient derivatives
  frozen along the base trajectory, which finite differences of coupled
  path ensembles must match to O(rho);
* the mean target response (the linearized drift of E[Y] along v), whose
  integral over [0, tau] divided by the terminal target slope gives the
  derivative of the hitting time; and
* a duality identity tying that same integral to the time adjoint:
  int_0^tau response dt = -int_0^tau Khat(t) . v(t) dt.

Everything here is diagnostic: these routines quantify agreement and
return tables rather than pass judgment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .adjoint import (
    target_hamiltonian_du,
    target_slope_at_tau,
    time_adjoint_closed_form,
)
from .problem import (
    LinearDynamics,
    ProblemSpec,
    ValidationReport,
    perturbed_policy,
    target_control_row,
    target_state_row,
)
from .simulate import SimGrid, _affine_path, _joint_matrices, solve_mean_path, step_noise

__all__ = [
    "PerturbationSpec",
    "SensitivityResult",
    "FdStateRow",
    "TauDerivative",
    "FdTauRow",
    "FdTauReport",
    "DualIdentityReport",
    "simulate_state_sensitivity",
    "fd_state_check",
    "mean_target_response",
    "hit_time_derivative",
    "fd_tau_check",
    "dual_identity_check",
]


@dataclass
class PerturbationSpec:
    """A direction policy together with the finite-difference step sizes.

    `validate` checks that every perturbed control u + rho v stays inside
    the admissible box, sampling both one-sided limits on a grid refined
    well past the segment breakpoints.
    """

    direction: object
    rhos: Sequence[float] = (1e-2, 1e-3, 1e-4)

    def validate(self, spec: ProblemSpec, policy, n_samples: int = 257) -> ValidationReport:
        out = []
        if self.direction.horizon != policy.horizon:
            out.append(
                "perturbation.direction: horizon "
                f"{self.direction.horizon} != policy horizon {policy.horizon}"
            )
            return ValidationReport(ok=False, violations=out)
        for i, rho in enumerate(self.rhos):
            if not rho > 0:
                out.append(f"perturbation.rhos[{i}]: must be positive, got {rho}")
        ts = np.union1d(
            np.linspace(0.0, policy.horizon, n_samples),
            np.union1d(policy.breakpoints, self.direction.breakpoints),
        )
        for i, rho in enumerate(self.rhos):
            if not rho > 0:
                continue
            pol = perturbed_policy(policy, self.direction, rho)
            for side in (+1, -1):
                vals = pol.values(ts, side=side)
                low = vals - spec.control_set.lower
                high = spec.control_set.upper - vals
                worst = min(float(low.min()), float(high.min()))
                if worst < -1e-12:
                    j = int(np.argmin(np.minimum(low, high).min(axis=1)))
                    out.append(
                        f"perturbation.rhos[{i}]: perturbed control leaves the box "
                        f"near t={ts[j]:.6g} (margin {worst:.3e})"
                    )
                    break
        return ValidationReport(ok=not out, violations=out)


def _em_paths(dyn, policy, grid: SimGrid, seed: int, n_paths: int) -> np.ndarray:
    """Raw Euler-Maruyama state paths, shape (n_paths, n_steps + 1, m).

    Noise is keyed by (seed, step) exactly as in `simulate_ensemble`, so
    ensembles with equal (seed, n_paths, d) share their Brownian
    increments; finite differences below rely on that coupling.
    """
    times = grid.times()
    dt = grid.dt
    sq = np.sqrt(dt)
    d = dyn.d
    u_nodes = np.atleast_2d(policy.values(times, side=+1))
    X = np.tile(dyn.x0, (n_paths, 1))
    out = np.empty((n_paths, grid.n_steps + 1, dyn.m))
    out[:, 0, :] = X
    for j in range(grid.n_steps):
        u = u_nodes[j]
        Xn = X + dyn.drift(X, u) * dt
        if d > 0:
            dW = step_noise(seed, j, n_paths, d) * sq
            Xn = Xn + np.einsum("nmj,nj->nm", dyn.diffusion(X, u), dW)
        X = Xn
        out[:, j + 1, :] = X
    return out


@dataclass
class SensitivityResult:
    """Pathwise first-order state response to a control direction."""

    grid: SimGrid
    seed: int
    paths: np.ndarray            # (n_paths, n_steps + 1, m)
    mean_mc: np.ndarray          # (n_steps + 1, m)
    mean_exact: Optional[np.ndarray] = None  # closed mean, linear dynamics only


def simulate_state_sensitivity(
    spec: ProblemSpec,
    policy,
    direction,
    grid: SimGrid,
    seed: int,
    n_paths: int,
    dynamics=None,
) -> SensitivityResult:
    """Simulate the sensitivity SDE along the base trajectory.

    The base state and its sensitivity advance together under shared
    noise; coefficient derivatives are always evaluated at the *base*
    (X, u), which is what makes the expansion first order.  For linear
    dynamics the sensitivity mean also solves dE/dt = A E + B v exactly,
    returned as `mean_exact`.
    """
    dyn = dynamics if dynamics is not None else spec.dynamics
    times = grid.times()
    dt = grid.dt
    sq = np.sqrt(dt)
    d = dyn.d
    u_nodes = np.atleast_2d(policy.values(times, side=+1))
    v_nodes = np.atleast_2d(direction.values(times, side=+1))

    X = np.tile(dyn.x0, (n_paths, 1))
    S = np.zeros((n_paths, dyn.m))
    out = np.zeros((n_paths, grid.n_steps + 1, dyn.m))
    for j in range(grid.n_steps):
        u, v = u_nodes[j], v_nodes[j]
        Sn = S + (dyn.drift_dstate(X, u, S) + dyn.drift_dcontrol(X, u, v)) * dt
        Xn = X + dyn.drift(X, u) * dt
        if d > 0:
            dW = step_noise(seed, j, n_paths, d) * sq
            dsig = dyn.diffusion_dstate(X, u, S) + dyn.diffusion_dcontrol(X, u, v)[None, :, :]
            Sn = Sn + np.einsum("nmj,nj->nm", dsig, dW)
            Xn = Xn + np.einsum("nmj,nj->nm", dyn.diffusion(X, u), dW)
        X, S = Xn, Sn
        out[:, j + 1, :] = S

    mean_exact = None
    if isinstance(dyn, LinearDynamics):
        mean_exact = _affine_path(
            dyn.A, dyn.B, np.zeros(dyn.m), direction, times, np.zeros(dyn.m)
        )
    return SensitivityResult(
        grid=grid,
        seed=seed,
        paths=out,
        mean_mc=out.mean(axis=0),
        mean_exact=mean_exact,
    )


@dataclass
class FdStateRow:
    """Sup-norm gap between (X^rho - X)/rho and the sensitivity paths."""

    rho: float
    sup_err: float
    t_at_sup: float
    stderr: float


def fd_state_check(
    spec: ProblemSpec,
    policy,
    direction,
    rhos: Sequence[float],
    grid: SimGrid,
    seed: int,
    n_paths: int,
    dynamics=None,
) -> list:
    """Coupled finite-difference check of the sensitivity equation.

    For each step size the base and perturbed ensembles reuse the same
    Brownian increments, so the pathwise quotient converges at rate
    O(rho) and the reported sup error should shrink linearly in rho down
    to the discretization floor.
    """
    dyn = dynamics if dynamics is not None else spec.dynamics
    times = grid.times()
    base = _em_paths(dyn, policy, grid, seed, n_paths)
    sens = simulate_state_sensitivity(
        spec, policy, direction, grid, seed, n_paths, dynamics=dyn
    ).paths
    rows = []
    for rho in rhos:
        pert = _em_paths(dyn, perturbed_policy(policy, direction, rho), grid, seed, n_paths)
        gap = (pert - base) / rho - sens
        errs = np.sqrt(np.sum(gap * gap, axis=2))  # (n_paths, nodes)
        mean_err = errs.mean(axis=0)
        i = int(np.argmax(mean_err))
        rows.append(
            FdStateRow(
                rho=float(rho),
                sup_err=float(mean_err[i]),
                t_at_sup=float(times[i]),
                stderr=float(errs[:, i].std(ddof=1) / np.sqrt(n_paths)),
            )
        )
    return rows


def mean_target_response(ey_values, v_values, target, dynamics) -> np.ndarray:
    """Linearized drift of E[Y] along a direction: (E1+E2+E3A).E[y] + (E3B+E4).v.

    `ey_values` holds the sensitivity mean (nodes, m) and `v_values` the
    direction (nodes, k); single vectors also work.
    """
    ey = np.asarray(ey_values, dtype=float)
    v = np.asarray(v_values, dtype=float)
    return ey @ target_state_row(target, dynamics) + v @ target_control_row(target, dynamics)


def _mean_and_response_at_tau(spec: ProblemSpec, policy, direction, tau: float, grid: SimGrid):
    """Exact-to-tau integration of the mean state and of int_0^tau response dt."""
    times = grid.times()
    cut = times[times < tau - 1e-15]
    times2 = np.append(cut, tau)
    M, F, c0 = _joint_matrices(spec.dynamics, spec.target, 0.0)
    z0 = np.concatenate([spec.dynamics.x0, [spec.target.y0]])
    mean_x_tau = _affine_path(M, F, c0, policy, times2, z0)[-1, : spec.dynamics.m]
    w0 = np.zeros(spec.dynamics.m + 1)
    if direction is not None:
        resp = _affine_path(M, F, np.zeros_like(c0), direction, times2, w0)[-1, -1]
    else:
        resp = 0.0
    return mean_x_tau, float(resp)


@dataclass
class TauDerivative:
    """Derivative of the capped hitting time along a direction.

    For an interior hit the value is response_integral / slope_at_tau;
    at the cap (labels "ii" and "iii") the hitting time is locally the
    constant T for admissible perturbations, so the derivative reported
    is zero and the interior quantities are NaN.
    """

    tau: float
    case_label: str
    slope_at_tau: float
    response_integral: float
    value: float


def hit_time_derivative(
    spec: ProblemSpec, policy, direction, grid: SimGrid
) -> TauDerivative:
    """Closed-form directional derivative (tau - tau^rho)/rho -> value."""
    mp = solve_mean_path(spec, policy, grid)
    if mp.case_label != "i" or mp.tau <= 0.0:
        return TauDerivative(mp.tau, mp.case_label, float("nan"), float("nan"), 0.0)
    mean_x_tau, resp = _mean_and_response_at_tau(spec, policy, direction, mp.tau, grid)
    u_tau = policy.value(mp.tau, side=-1)
    slope = target_slope_at_tau(
        spec.target,
        spec.dynamics,
        mean_x_tau,
        u_tau,
        eps_regularize=spec.eps_regularize,
    )
    return TauDerivative(mp.tau, mp.case_label, slope, resp, resp / slope)


@dataclass
class FdTauRow:
    rho: float
    quotient: float
    abs_gap: float
    rel_gap: float


@dataclass
class FdTauReport:
    """Finite-difference table for the hitting-time derivative."""

    derivative: TauDerivative
    rows: list = field(default_factory=list)


def fd_tau_check(
    spec: ProblemSpec, policy, direction, rhos: Sequence[float], grid: SimGrid
) -> FdTauReport:
    """Compare (tau - tau^rho)/rho against the closed-form derivative.

    Works in every regime: at the cap the reference value is zero and the
    quotients should vanish identically for small rho.  Relative gaps are
    measured against max(1, |derivative|).
    """
    deriv = hit_time_derivative(spec, policy, direction, grid)
    rows = []
    for rho in rhos:
        pol = perturbed_policy(policy, direction, rho)
        mp = solve_mean_path(spec, pol, grid)
        quot = (deriv.tau - mp.tau) / rho
        gap = abs(quot - deriv.value)
        rows.append(
            FdTauRow(
                rho=float(rho),
                quotient=float(quot),
                abs_gap=float(gap),
                rel_gap=float(gap / max(1.0, abs(deriv.value))),
            )
        )
    return FdTauReport(derivative=deriv, rows=rows)


@dataclass
class DualIdentityReport:
    tau: float
    response_integral: float
    adjoint_integral: float
    abs_gap: float
    rel_gap: float


def dual_identity_check(
    spec: ProblemSpec, policy, direction, grid: SimGrid
) -> DualIdentityReport:
    """Verify int_0^tau response dt = -int_0^tau Khat(t).v(t) dt.

    The left side integrates the sensitivity-mean system to tau at 4th
    order; the right side pairs the closed-form time adjoint with the
    direction through adaptive quadrature split at direction breakpoints.
    Requires an interior hit.
    """
    mp = solve_mean_path(spec, policy, grid)
    if mp.case_label != "i" or mp.tau <= 0.0:
        raise ValueError(f"duality check needs an interior hit, got case {mp.case_label}")
    tau = mp.tau
    _, lhs = _mean_and_response_at_tau(spec, policy, direction, tau, grid)

    dyn, tgt = spec.dynamics, spec.target

    def integrand(t: float) -> float:
        p0 = time_adjoint_closed_form(dyn, tgt, tau, [t])[0]
        kh = target_hamiltonian_du(p0, dyn, tgt)
        return float(kh @ direction.value(t, side=+1))

    bp = direction.breakpoints
    edges = np.unique(np.clip(np.append(bp, [0.0, tau]), 0.0, tau))
    rhs = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            val, _ = quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
            rhs += val
    rhs = -rhs
    gap = abs(lhs - rhs)
    return DualIdentityReport(
        tau=tau,
        response_integral=float(lhs),
        adjoint_integral=float(rhs),
        abs_gap=float(gap),
        rel_gap=float(gap / max(1.0, abs(lhs), abs(rhs))),
    )
