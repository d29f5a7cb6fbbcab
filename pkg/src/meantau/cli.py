"""Command-line interface.

Subcommands:

* simulate           path ensemble of the coupled (state, target) system
* mean               deterministic mean solve with hit detection
* portfolio          closed-form wealth-target policy, figure, MC check
* bangbang           fixed-point synthesis of the vertex policy
* check-smp          first-order optimality residual of a candidate
* verify-variational finite-difference and duality diagnostics

Every run writes `summary.json` into the output directory plus the
command's own artifacts.  Outputs are pure functions of the config and
flags: no timestamps, no environment data, and `--threads` never changes
a byte (reductions are fixed-order; the flag is a scheduling hint only).

Exit codes: 0 success; 2 invalid config or arguments; 3 numerical
failure (no convergence, infeasible target, diverged paths, failed
cross-check); 4 structural assumption violated (non-transversal hit,
singular arc, parameters outside the supported regime).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .bangbang import synthesize
from .config import load_config, parse_policy, parse_portfolio_params, parse_problem
from .errors import (
    AssumptionViolationError,
    DivergenceError,
    InfeasibleError,
    NonConvergenceError,
    NumericalConsistencyError,
    SpecValidationError,
)
from .output import fmt_float, svg_line_chart, write_csv, write_json, write_svg
from .portfolio import (
    figure_columns,
    mc_validate,
    optimal_policy,
    solve_tau,
    to_problem_spec,
)
from .problem import ControlPolicy, policy_eval
from .simulate import SimGrid, simulate_ensemble, solve_mean_path
from .smp import check_candidate
from .variational import (
    PerturbationSpec,
    dual_identity_check,
    fd_state_check,
    fd_tau_check,
)

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meantau",
        description="Control of linear systems up to a mean-field minimum-time target.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument(
            "--config",
            required=config_required,
            help="path to the JSON config" + ("" if config_required else " (optional)"),
        )
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="scheduling hint; artifacts are byte-identical for any value",
        )

    p = sub.add_parser("simulate", help="simulate a path ensemble")
    common(p)
    p.add_argument("--paths", type=int, default=1000, help="number of Monte Carlo paths")
    p.add_argument("--steps", type=int, default=1000, help="time steps over the horizon")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument(
        "--store-paths", action="store_true", help="keep paths and estimate the objective"
    )

    p = sub.add_parser("mean", help="solve the mean flow and detect the hit")
    common(p)
    p.add_argument("--steps", type=int, default=4096, help="time steps over the horizon")

    p = sub.add_parser("portfolio", help="closed-form wealth-target policy")
    common(p, config_required=False)
    p.add_argument("--mc", action="store_true", help="run the Monte Carlo consistency check")
    p.add_argument("--paths", type=int, default=200_000, help="paths for --mc")
    p.add_argument("--dt", type=float, default=1.0 / 256.0, help="time step for --mc")
    p.add_argument("--seed", type=int, default=42, help="seed for --mc")
    p.add_argument(
        "--vol-pair",
        type=float,
        nargs=2,
        metavar=("V1", "V2"),
        help="repeat --mc at two volatilities with shared noise",
    )

    p = sub.add_parser("bangbang", help="synthesize the vertex policy")
    common(p)
    p.add_argument("--nodes", type=int, default=4096, help="switching grid nodes")
    p.add_argument("--max-iter", type=int, default=100, help="fixed-point budget")
    p.add_argument("--damping", type=float, default=0.5, help="fixed-point damping in (0, 1]")

    p = sub.add_parser("check-smp", help="first-order optimality residual")
    common(p)
    p.add_argument("--t-nodes", type=int, default=2048, help="time nodes of the check grid")
    p.add_argument("--u-samples", type=int, default=101, help="control samples per axis")
    p.add_argument("--tol", type=float, default=1e-8, help="pass threshold on the residual")

    p = sub.add_parser("verify-variational", help="finite-difference diagnostics")
    common(p)
    p.add_argument("--steps", type=int, default=40_000, help="mean-solve steps for the tau table")
    p.add_argument("--paths", type=int, default=256, help="paths for the state table")
    p.add_argument("--seed", type=int, default=0, help="noise seed for the state table")
    p.add_argument(
        "--skip-state", action="store_true", help="skip the Monte Carlo state table"
    )
    return parser


def _policy_from(cfg: dict, spec) -> ControlPolicy:
    if "policy" not in cfg:
        raise SpecValidationError(["policy: missing required section"])
    return parse_policy(cfg["policy"], horizon=spec.horizon)


def _write_summary(out_dir: str, payload: dict):
    write_json(os.path.join(out_dir, "summary.json"), payload)


def _run_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = parse_problem(_require(cfg, "problem"))
    policy = _policy_from(cfg, spec)
    grid = SimGrid(spec.horizon, args.steps)
    res = simulate_ensemble(
        spec, policy, args.paths, grid, args.seed, store_paths=args.store_paths or None
    )
    ts = grid.times()
    m = spec.dynamics.m
    header = (
        ["t"]
        + [f"mean_x_{i}" for i in range(m)]
        + [f"std_x_{i}" for i in range(m)]
        + ["mean_y"]
    )
    columns = (
        [ts]
        + [res.mean_x[:, i] for i in range(m)]
        + [res.std_x[:, i] for i in range(m)]
        + [res.mean_y]
    )
    write_csv(os.path.join(args.out, "ensemble.csv"), header, columns)
    summary = {
        "command": "simulate",
        "n_paths": args.paths,
        "steps": args.steps,
        "seed": args.seed,
        "tau": res.tau,
        "case_label": res.case_label,
        "mean_terminal": list(res.mean_x[-1]),
        "outputs": ["ensemble.csv", "summary.json"],
    }
    if res.cost is not None:
        summary["cost"] = res.cost
        summary["cost_stderr"] = res.cost_stderr
    _write_summary(args.out, summary)
    return 0


def _run_mean(args) -> int:
    cfg = load_config(args.config)
    spec = parse_problem(_require(cfg, "problem"))
    policy = _policy_from(cfg, spec)
    grid = SimGrid(spec.horizon, args.steps)
    mp = solve_mean_path(spec, policy, grid)
    ts = grid.times()
    m = spec.dynamics.m
    header = ["t"] + [f"mean_x_{i}" for i in range(m)] + ["mean_y"]
    columns = [ts] + [mp.mean_x[:, i] for i in range(m)] + [mp.mean_y]
    write_csv(os.path.join(args.out, "mean.csv"), header, columns)
    _write_summary(
        args.out,
        {
            "command": "mean",
            "steps": args.steps,
            "tau": mp.tau,
            "case_label": mp.case_label,
            "outputs": ["mean.csv", "summary.json"],
        },
    )
    return 0


def _run_portfolio(args) -> int:
    params_obj = {}
    if args.config:
        cfg = load_config(args.config)
        params_obj = cfg.get("params", cfg)
        if not isinstance(params_obj, dict):
            raise SpecValidationError(["params: expected an object"])
    params = parse_portfolio_params(params_obj)
    sol = solve_tau(params)
    fig = figure_columns(params)
    write_csv(
        os.path.join(args.out, "portfolio.csv"),
        ["t", "control", "mean_wealth"],
        [fig["t"], fig["control"], fig["mean_wealth"]],
    )
    svg = svg_line_chart(
        fig["t"],
        [fig["control"], fig["mean_wealth"]],
        ["control", "mean wealth"],
        title="Wealth-target policy",
        x_label="t",
        y_label="value",
        markers=(sol.t1, sol.t2),
    )
    write_svg(os.path.join(args.out, "portfolio.svg"), svg)
    summary = {
        "command": "portfolio",
        "params": {
            "rate": params.rate,
            "growth": params.growth,
            "vol": params.vol,
            "target_wealth": params.target_wealth,
            "initial_wealth": params.initial_wealth,
            "beta": params.beta,
            "horizon": params.horizon,
        },
        "tau": sol.tau,
        "t1": sol.t1,
        "t2": sol.t2,
        "residual": sol.residual,
        "control_at_0": float(policy_eval(optimal_policy(params, sol), 0.0)[0]),
        "outputs": ["portfolio.csv", "portfolio.svg", "summary.json"],
    }
    if args.mc:
        report = mc_validate(
            params,
            n_paths=args.paths,
            dt=args.dt,
            seed=args.seed,
            vol_pair=tuple(args.vol_pair) if args.vol_pair else None,
        )
        mc = {
            "n_paths": report.n_paths,
            "dt": report.dt,
            "seed": report.seed,
            "mean_terminal": report.mean_terminal,
            "stderr": report.stderr,
            "z_score": report.z_score,
        }
        if report.vol_pair is not None:
            mc["vol_pair"] = list(report.vol_pair)
            mc["vol_pair_means"] = list(report.vol_pair_means)
            mc["vol_pair_gap"] = report.vol_pair_gap
        summary["mc"] = mc
    _write_summary(args.out, summary)
    return 0


def _run_bangbang(args) -> int:
    cfg = load_config(args.config)
    spec = parse_problem(_require(cfg, "problem"))
    result = synthesize(
        spec, n_nodes=args.nodes, max_iter=args.max_iter, damping=args.damping
    )
    segments = [
        {
            "t_start": s.t_start,
            "t_end": s.t_end,
            "gamma0": list(s.gamma0),
            "gamma1": list(s.gamma1),
            "gamma2": list(s.gamma2),
        }
        for s in result.policy.segments
    ]
    payload = {
        "tau": result.tau,
        "case_label": result.case_label,
        "slope_at_tau": result.slope_at_tau,
        "iterations": result.iterations,
        "tau_history": result.history,
        "switch_times": [list(s) for s in result.switch_times],
        "policy": {"segments": segments},
    }
    write_json(os.path.join(args.out, "policy.json"), payload)
    _write_summary(
        args.out,
        {
            "command": "bangbang",
            "tau": result.tau,
            "case_label": result.case_label,
            "iterations": result.iterations,
            "n_switches": [len(s) for s in result.switch_times],
            "outputs": ["policy.json", "summary.json"],
        },
    )
    return 0


def _run_check_smp(args) -> int:
    cfg = load_config(args.config)
    spec = parse_problem(_require(cfg, "problem"))
    policy = _policy_from(cfg, spec)
    report = check_candidate(
        spec,
        policy,
        t_grid_size=args.t_nodes,
        u_samples_per_axis=args.u_samples,
        tol=args.tol,
    )
    payload = {
        "tau": report.tau,
        "case_label": report.case_label,
        "tol": report.tol,
        "max_residual": report.max_residual,
        "witness_t": report.witness_t,
        "witness_u": list(np.atleast_1d(report.witness_u)),
        "passed": report.passed,
        "terminal_weight": report.terminal_weight,
        "slope_at_tau": report.slope_at_tau,
        "n_time_nodes": report.n_time_nodes,
        "n_control_samples": report.n_control_samples,
        "variants": {
            name: {
                "max_residual": v["max_residual"],
                "witness_t": v["witness_t"],
                "witness_u": list(np.atleast_1d(v["witness_u"])),
            }
            for name, v in report.variants.items()
        },
    }
    write_json(os.path.join(args.out, "smp.json"), payload)
    _write_summary(
        args.out,
        {
            "command": "check-smp",
            "tau": report.tau,
            "case_label": report.case_label,
            "max_residual": report.max_residual,
            "passed": report.passed,
            "outputs": ["smp.json", "summary.json"],
        },
    )
    return 0


def _run_verify_variational(args) -> int:
    cfg = load_config(args.config)
    spec = parse_problem(_require(cfg, "problem"))
    policy = _policy_from(cfg, spec)
    if "direction" not in cfg:
        raise SpecValidationError(["direction: missing required section"])
    direction = parse_policy(cfg["direction"], path="direction", horizon=spec.horizon)
    rhos = cfg.get("rhos", [1e-2, 1e-3, 1e-4])
    if not isinstance(rhos, list) or not rhos:
        raise SpecValidationError(["rhos: expected a non-empty list of step sizes"])
    pert = PerturbationSpec(direction=direction, rhos=[float(r) for r in rhos])
    admissible = pert.validate(spec, policy)

    grid = SimGrid(spec.horizon, args.steps)
    tau_report = fd_tau_check(spec, policy, direction, pert.rhos, grid)
    payload = {
        "admissible": admissible.ok,
        "admissibility_violations": admissible.violations,
        "tau": tau_report.derivative.tau,
        "case_label": tau_report.derivative.case_label,
        "tau_derivative": tau_report.derivative.value,
        "slope_at_tau": tau_report.derivative.slope_at_tau,
        "response_integral": tau_report.derivative.response_integral,
        "tau_table": [
            {
                "rho": r.rho,
                "quotient": r.quotient,
                "abs_gap": r.abs_gap,
                "rel_gap": r.rel_gap,
            }
            for r in tau_report.rows
        ],
    }
    if tau_report.derivative.case_label == "i" and tau_report.derivative.tau > 0:
        dual = dual_identity_check(spec, policy, direction, grid)
        payload["dual_identity"] = {
            "response_integral": dual.response_integral,
            "adjoint_integral": dual.adjoint_integral,
            "abs_gap": dual.abs_gap,
            "rel_gap": dual.rel_gap,
        }
    if not args.skip_state:
        state_grid = SimGrid(spec.horizon, min(args.steps, 2000))
        rows = fd_state_check(
            spec, policy, direction, pert.rhos, state_grid, args.seed, args.paths
        )
        payload["state_table"] = [
            {
                "rho": r.rho,
                "sup_err": r.sup_err,
                "t_at_sup": r.t_at_sup,
                "stderr": r.stderr,
            }
            for r in rows
        ]
    write_json(os.path.join(args.out, "variational.json"), payload)
    _write_summary(
        args.out,
        {
            "command": "verify-variational",
            "tau": payload["tau"],
            "case_label": payload["case_label"],
            "tau_derivative": payload["tau_derivative"],
            "outputs": ["variational.json", "summary.json"],
        },
    )
    return 0


def _require(cfg: dict, key: str) -> dict:
    if key not in cfg or not isinstance(cfg[key], dict):
        raise SpecValidationError([f"{key}: missing required section"])
    return cfg[key]


_RUNNERS = {
    "simulate": _run_simulate,
    "mean": _run_mean,
    "portfolio": _run_portfolio,
    "bangbang": _run_bangbang,
    "check-smp": _run_check_smp,
    "verify-variational": _run_verify_variational,
}


def _diagnostic(exc: Exception) -> str:
    info = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SpecValidationError):
        info["violations"] = exc.violations
    if isinstance(exc, NonConvergenceError):
        info["cycle"] = exc.cycle
        info["history_tail"] = [fmt_float(h) for h in exc.history[-5:]]
    return json.dumps(info, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        return _RUNNERS[args.command](args)
    except (SpecValidationError, ValueError) as exc:
        print(_diagnostic(exc), file=sys.stderr)
        return 2
    except (
        NonConvergenceError,
        InfeasibleError,
        DivergenceError,
        NumericalConsistencyError,
    ) as exc:
        print(_diagnostic(exc), file=sys.stderr)
        return 3
    except AssumptionViolationError as exc:
        print(_diagnostic(exc), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
