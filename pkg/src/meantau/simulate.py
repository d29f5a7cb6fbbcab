"""Mean flows, minimum-time detection, and ensemble simulation.

Two deterministic solvers handle the means: the state mean follows the
linear ODE dE[X]/dt = A E[X] + B u(t), and the target mean follows
dE[Y]/dt = (E1 + E2 + E3 A) E[X] + (E3 B + E4) u(t) + eps.  Both are
integrated with one classical 4th-order step per sub-interval, where the
sub-intervals are the grid steps split at control breakpoints so that the
integrator never straddles a discontinuity of u.

Path ensembles use explicit Euler-Maruyama with the mean-field couplings
(E[X] and E[b]) evaluated as ensemble averages at the start of each step.
Noise for step j is drawn from a counter-based generator keyed by
(seed, j), so results are a pure function of (spec, policy, N, grid,
seed) regardless of how the path loop is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError
from .problem import (
    ControlPolicy,
    LinearDynamics,
    ProblemSpec,
    TargetCoefficients,
    target_control_row,
    target_state_row,
)

__all__ = [
    "SimGrid",
    "HookDynamics",
    "EnsembleResult",
    "MeanPath",
    "mean_ode_solve",
    "mean_target_solve",
    "solve_mean_path",
    "detect_min_time",
    "simulate_ensemble",
    "estimate_cost",
]


@dataclass(frozen=True)
class SimGrid:
    """Uniform time grid with nodes t_j = j * dt, j = 0..n_steps."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon  # guard the endpoint against rounding
        return t


# ---------------------------------------------------------------------------
# Affine RK4 engine


def _rk4_transfer(M: np.ndarray, h: float) -> np.ndarray:
    """One-step propagator of z' = M z under classical RK4."""
    p = M.shape[0]
    phi = np.eye(p)
    term = np.eye(p)
    for order in (1, 2, 3, 4):
        term = (h / order) * (M @ term)
        phi = phi + term
    return phi


def _affine_path(M, F, c0, policy, times, z0):
    """Integrate z' = M z + F u(t) + c0 through `times` with RK4.

    Each interval between consecutive requested times is split at control
    breakpoints; stage values of u at a sub-interval boundary use the
    one-sided limit from inside the sub-interval.
    """
    times = np.asarray(times, dtype=float)
    p = M.shape[0]
    z0 = np.asarray(z0, dtype=float).reshape(p)
    if len(times) == 1:
        return z0[None, :].copy()

    if policy is not None:
        bp = policy.breakpoints
        inner = bp[(bp > times[0]) & (bp < times[-1])]
        edges = np.union1d(times, inner)
    else:
        edges = times
    s0, s1 = edges[:-1], edges[1:]
    hs = s1 - s0

    # stage forcing values, vectorized over sub-intervals
    if policy is not None and F is not None:
        f0 = policy.values(s0, side=+1) @ F.T + c0
        fm = policy.values(0.5 * (s0 + s1), side=+1) @ F.T + c0
        f1 = policy.values(s1, side=-1) @ F.T + c0
    else:
        f0 = fm = f1 = np.broadcast_to(c0, (len(s0), p))

    half = 0.5 * hs[:, None]
    k1 = f0
    k2 = half * (k1 @ M.T) + fm
    k3 = half * (k2 @ M.T) + fm
    k4 = hs[:, None] * (k3 @ M.T) + f1
    r = (hs[:, None] / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    uniq_h, inv = np.unique(hs, return_inverse=True)
    transfers = [_rk4_transfer(M, h) for h in uniq_h]

    # indices of sub-intervals whose right edge is a requested node
    rec = np.full(len(s1), -1, dtype=np.int64)
    pos = np.searchsorted(times, s1)
    hit = (pos < len(times)) & (times[np.minimum(pos, len(times) - 1)] == s1)
    rec[hit] = pos[hit]

    out = np.empty((len(times), p))
    out[0] = z0
    z = z0
    for i in range(len(s0)):
        z = transfers[inv[i]] @ z + r[i]
        j = rec[i]
        if j >= 0:
            out[j] = z
    return out


def mean_ode_solve(dynamics: LinearDynamics, policy, grid: SimGrid) -> np.ndarray:
    """Mean state trajectory on the grid nodes, shape (n_steps + 1, m).

    Diffusion coefficients never enter: the mean of a linear system is
    closed under the drift alone.
    """
    return _affine_path(
        dynamics.A, dynamics.B, np.zeros(dynamics.m), policy, grid.times(), dynamics.x0
    )


def _joint_matrices(dynamics, target, eps_regularize):
    m = dynamics.m
    row_x = target_state_row(target, dynamics)
    row_u = target_control_row(target, dynamics)
    M = np.zeros((m + 1, m + 1))
    M[:m, :m] = dynamics.A
    M[m, :m] = row_x
    F = np.vstack([dynamics.B, row_u])
    c0 = np.zeros(m + 1)
    c0[m] = eps_regularize
    return M, F, c0


def mean_target_solve(
    target: TargetCoefficients,
    dynamics: LinearDynamics,
    mean_x: np.ndarray,
    policy,
    grid: SimGrid,
    eps_regularize: float = 0.0,
) -> np.ndarray:
    """Mean of the monitoring process on the grid nodes.

    Integrates E[Y](t) = y0 + int_0^t (G(s) + eps) ds jointly with the
    state mean at the same 4th order, then cross-checks the joint state
    column against the supplied `mean_x`.  The target diffusion plays no
    role here.
    """
    mean_x = np.atleast_2d(np.asarray(mean_x, dtype=float))
    times = grid.times()
    if mean_x.shape != (len(times), dynamics.m):
        raise ValueError(
            f"mean_x shape {mean_x.shape} does not match grid/state dimensions"
        )
    M, F, c0 = _joint_matrices(dynamics, target, eps_regularize)
    z0 = np.concatenate([dynamics.x0, [target.y0]])
    z = _affine_path(M, F, c0, policy, times, z0)
    scale = 1.0 + np.max(np.abs(mean_x), initial=0.0)
    gap = np.max(np.abs(z[:, : dynamics.m] - mean_x))
    if gap > 1e-9 * scale:
        raise ValueError(
            f"mean_x is inconsistent with dynamics/policy on this grid (gap {gap:.3e})"
        )
    return z[:, dynamics.m]


def detect_min_time(mean_y, grid: SimGrid):
    """First time the mean target is <= 0, with its regime label.

    Returns (tau, label): label "i" for an interior hit (including the
    trivial y0 <= 0 case, where tau = 0), "ii" when the level is never
    reached on [0, T] (tau = T), and "iii" when the first hit lands
    exactly on the horizon.  The crossing node is refined by linear
    interpolation; a tangential touch counts as a hit, and the first
    qualifying node wins.
    """
    y = np.asarray(mean_y, dtype=float)
    times = grid.times()
    if y.shape != times.shape:
        raise ValueError("mean_y length does not match the grid")
    if y[0] <= 0.0:
        return 0.0, "i"
    hits = np.nonzero(y <= 0.0)[0]
    if hits.size == 0:
        return grid.horizon, "ii"
    j = int(hits[0])
    tau = times[j - 1] + (times[j] - times[j - 1]) * y[j - 1] / (y[j - 1] - y[j])
    if tau >= grid.horizon:
        return grid.horizon, "iii"
    return float(tau), "i"


@dataclass
class MeanPath:
    """Joint mean solve plus its detected minimum time."""

    grid: SimGrid
    mean_x: np.ndarray
    mean_y: np.ndarray
    tau: float
    case_label: str


def solve_mean_path(spec: ProblemSpec, policy, grid: SimGrid) -> MeanPath:
    """One-pass mean state + target solve with hitting-time detection."""
    M, F, c0 = _joint_matrices(spec.dynamics, spec.target, spec.eps_regularize)
    z0 = np.concatenate([spec.dynamics.x0, [spec.target.y0]])
    z = _affine_path(M, F, c0, policy, grid.times(), z0)
    mean_x = z[:, : spec.dynamics.m]
    mean_y = z[:, spec.dynamics.m]
    tau, label = detect_min_time(mean_y, grid)
    return MeanPath(grid, mean_x, mean_y, tau, label)


# ---------------------------------------------------------------------------
# Path ensembles


@dataclass
class HookDynamics:
    """User-supplied state coefficients for nonlinear experiments.

    `drift(X, u)` and `diffusion(X, u)` act on path batches (X has shape
    (N, m)) and return (N, m) and (N, m, d).  The *_dstate / *_dcontrol
    entries are directional derivatives along a state batch Y or a
    control direction v, used by the first-order sensitivity equation.
    """

    m: int
    k: int
    d: int
    x0: np.ndarray
    drift: Callable
    diffusion: Callable
    drift_dstate: Optional[Callable] = None
    drift_dcontrol: Optional[Callable] = None
    diffusion_dstate: Optional[Callable] = None
    diffusion_dcontrol: Optional[Callable] = None

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))


def step_noise(seed: int, step: int, n_paths: int, d: int) -> np.ndarray:
    """Standard normal block for one step, keyed by (seed, step).

    Counter-based (Philox) streams make the draw independent of worker
    scheduling and of the surrounding call pattern.
    """
    bitgen = np.random.Philox(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(step),)))
    return np.random.Generator(bitgen).standard_normal((n_paths, d))


@dataclass
class EnsembleResult:
    """Euler-Maruyama ensemble summary.

    mean_x / std_x / mean_y hold per-node ensemble statistics; paths_x is
    kept only when path storage is on.  tau and case_label come from
    `detect_min_time` applied to the ensemble mean of Y.
    """

    grid: SimGrid
    n_paths: int
    seed: int
    mean_x: np.ndarray
    mean_y: np.ndarray
    std_x: np.ndarray
    tau: float
    case_label: str
    paths_x: Optional[np.ndarray] = None
    cost: Optional[float] = None
    cost_stderr: Optional[float] = None


_PATH_STORAGE_CAP = 10_000


def simulate_ensemble(
    spec: ProblemSpec,
    policy,
    n_paths: int,
    grid: SimGrid,
    seed: int,
    store_paths: Optional[bool] = None,
    dynamics=None,
    target_drift_hook: Optional[Callable] = None,
    target_diffusion_hook: Optional[Callable] = None,
) -> EnsembleResult:
    """Simulate N coupled paths of (X, Y) and detect the mean hitting time.

    The linear target drift can be replaced by `target_drift_hook(mean_x,
    X, mean_b, u, t) -> (N,)` (and similarly for the diffusion hook) to
    experiment with nonlinear monitoring processes; `dynamics` likewise
    accepts a HookDynamics.  The command-line interface only exposes the
    linear family.

    Paths are stored when `store_paths` is true, defaulting to on for
    N <= 10^4 and off above that.
    """
    spec.require_valid()
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    dyn = dynamics if dynamics is not None else spec.dynamics
    tgt = spec.target
    times = grid.times()
    if policy.horizon < times[-1]:
        raise ValueError("policy horizon does not cover the grid")
    if store_paths is None:
        store_paths = n_paths <= _PATH_STORAGE_CAP

    n = grid.n_steps
    dt = grid.dt
    sq = np.sqrt(dt)
    m, d = dyn.m, dyn.d
    u_nodes = policy.values(times, side=+1)
    if u_nodes.ndim == 1:
        u_nodes = u_nodes[:, None]

    X = np.tile(dyn.x0, (n_paths, 1))
    Y = np.full(n_paths, tgt.y0)
    mean_x = np.empty((n + 1, m))
    std_x = np.empty((n + 1, m))
    mean_y = np.empty(n + 1)
    mean_x[0] = X.mean(axis=0)
    std_x[0] = X.std(axis=0, ddof=1)
    mean_y[0] = tgt.y0
    paths = None
    if store_paths:
        paths = np.empty((n_paths, n + 1, m))
        paths[:, 0, :] = X

    linear = isinstance(dyn, LinearDynamics)
    gspec = tgt.diffusion
    scalar_fast = linear and m == 1 and d == 1 and target_drift_hook is None

    for j in range(n):
        u = u_nodes[j]
        mx = X.mean(axis=0)
        dW = step_noise(seed, j, n_paths, max(d, 1))[:, :d] * sq

        if scalar_fast:
            x = X[:, 0]
            a = dyn.A[0, 0]
            bu = float(dyn.B[0] @ u)
            drift = a * x + bu
            mean_b = np.array([a * mx[0] + bu])
            w = dW[:, 0]
            diffus = dyn.C[0, 0, 0] * x + float(dyn.D[0, 0] @ u)
            Xn = (x + drift * dt + diffus * w)[:, None]
            hvals = (
                float(tgt.E1 @ mx + tgt.E3 @ mean_b + tgt.E4 @ u)
                + spec.eps_regularize
                + tgt.E2[0] * x
            )
            Yn = Y + hvals * dt
            if target_diffusion_hook is not None:
                Yn = Yn + np.einsum("nj,nj->n", target_diffusion_hook(mx, X, u, times[j]), dW)
            elif gspec is not None:
                grow = (
                    float(gspec.coef_mean[0] @ mx + gspec.coef_control[0] @ u)
                    + gspec.coef_state[0, 0] * x
                )
                Yn = Yn + grow * w
        else:
            drift = dyn.drift(X, u)
            mean_b = drift.mean(axis=0)
            Xn = X + drift * dt
            if d > 0:
                Xn = Xn + np.einsum("nmj,nj->nm", dyn.diffusion(X, u), dW)
            if target_drift_hook is not None:
                hvals = target_drift_hook(mx, X, mean_b, u, times[j]) + spec.eps_regularize
            else:
                hvals = (
                    float(tgt.E1 @ mx + tgt.E3 @ mean_b + tgt.E4 @ u)
                    + spec.eps_regularize
                    + X @ tgt.E2
                )
            Yn = Y + hvals * dt
            if target_diffusion_hook is not None:
                Yn = Yn + np.einsum("nj,nj->n", target_diffusion_hook(mx, X, u, times[j]), dW)
            elif gspec is not None and d > 0:
                grows = (
                    gspec.coef_mean @ mx + gspec.coef_control @ u + X @ gspec.coef_state.T
                )
                Yn = Yn + np.einsum("nj,nj->n", grows, dW)

        if not (np.all(np.isfinite(Xn)) and np.all(np.isfinite(Yn))):
            bad = np.nonzero(~(np.isfinite(Xn).all(axis=1) & np.isfinite(Yn)))[0]
            raise DivergenceError(step=j + 1, path=int(bad[0]))
        X, Y = Xn, Yn
        mean_x[j + 1] = X.mean(axis=0)
        std_x[j + 1] = X.std(axis=0, ddof=1)
        mean_y[j + 1] = Y.mean()
        if store_paths:
            paths[:, j + 1, :] = X

    tau, label = detect_min_time(mean_y, grid)
    result = EnsembleResult(
        grid=grid,
        n_paths=n_paths,
        seed=seed,
        mean_x=mean_x,
        mean_y=mean_y,
        std_x=std_x,
        tau=tau,
        case_label=label,
        paths_x=paths,
    )
    if store_paths and spec.cost is not None:
        result.cost, result.cost_stderr = estimate_cost(result, spec.cost, policy)
    return result


def estimate_cost(result: EnsembleResult, cost, policy):
    """Monte Carlo objective estimate over the detected [0, tau].

    Per path, the running cost is integrated with the trapezoid rule up
    to the last node before tau plus a partial panel ending at tau, where
    the state at tau is linearly interpolated; the terminal cost is added
    at that interpolated state.  Returns (mean, standard error).
    """
    if result.paths_x is None:
        raise ValueError("estimate_cost requires stored paths (store_paths=True)")
    times = result.grid.times()
    dt = result.grid.dt
    tau = result.tau
    paths = result.paths_x
    n_paths = paths.shape[0]

    j_last = int(np.searchsorted(times, tau, side="right") - 1)
    j_last = min(j_last, len(times) - 1)
    partial = tau - times[j_last]

    u_nodes = policy.values(times[: j_last + 1], side=+1)
    if u_nodes.ndim == 1:
        u_nodes = u_nodes[:, None]
    quad_u = 0.5 * np.einsum("tj,jk,tk->t", u_nodes, cost.Lambda, u_nodes)
    f_nodes = cost.kappa + paths[:, : j_last + 1, :] @ cost.c_lin + quad_u

    if j_last >= 1:
        run = np.trapezoid(f_nodes, dx=dt, axis=1)
    else:
        run = np.zeros(n_paths)

    if partial > 0.0 and j_last + 1 < len(times):
        lam = partial / dt
        x_tau = (1.0 - lam) * paths[:, j_last, :] + lam * paths[:, j_last + 1, :]
        u_tau = policy.value(tau, side=-1)
        f_tau = cost.kappa + x_tau @ cost.c_lin + 0.5 * float(u_tau @ cost.Lambda @ u_tau)
        run = run + 0.5 * (f_nodes[:, j_last] + f_tau) * partial
    else:
        x_tau = paths[:, j_last, :]

    total = run + cost.terminal(x_tau)
    j = float(np.mean(total))
    stderr = float(np.std(total, ddof=1) / np.sqrt(n_paths))
    return j, stderr
