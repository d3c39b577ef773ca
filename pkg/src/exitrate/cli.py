"""Command-line front end.

Subcommands: solve, optimize, qprocess, variational, simulate, verify,
representations.  Every report embeds the resolved configuration and the
master seed so a run can be replayed exactly.  Exit codes: 0 success,
1 usage or runtime error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from ._util import dump_json, jsonable
from .control import policy_iteration, export_trace_csv
from .eigen import principal_eigenpair, export_eigen_csv
from .errors import ExitRateError
from .grid import assemble_generator, build_grid, default_spacing
from .mc import (
    estimate_exit_rate,
    export_ensemble_csv,
    export_histogram_csv,
    mc_girsanov_check,
    simulate_killed,
    simulate_qprocess,
)
from .problems import load_problem, problem_by_name, validate_problem
from .qprocess import (
    doob_transform,
    export_measures_csv,
    girsanov_check,
    lyapunov_certificate,
    rayleigh_identity,
    stationary_measures,
    survival_asymptotics,
)
from .variational import (
    build_occupation_lp,
    build_w_grid,
    candidate_from_trace,
    export_mps,
    export_solution_csv,
    solve_lp,
    transform_point,
    verify_minimizer_structure,
)
from .verify import DEFAULT_SEED, four_representations, run_acceptance


def _resolve_problem(args: argparse.Namespace):
    name = args.problem
    params = {}
    for kv in args.param or []:
        k, _, v = kv.partition("=")
        params[k] = float(v)
    if name.endswith(".json"):
        spec = load_problem(name)
    else:
        spec = problem_by_name(name, **params)
    return validate_problem(spec)


def _config_dict(args: argparse.Namespace, prob, h: float) -> dict:
    cfg = {
        "problem": prob.name,
        "h": h,
        "seed": args.seed,
        "tol": args.tol,
    }
    if getattr(args, "param", None):
        cfg["params"] = {kv.partition("=")[0]: float(kv.partition("=")[2]) for kv in args.param}
    for key in ("mode", "dt", "T", "paths", "x0", "action"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    return jsonable(cfg)


def _emit(report: dict, args: argparse.Namespace, stem: str) -> None:
    report = jsonable(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        dump_json(report, os.path.join(args.out, stem + ".json"))
    else:
        print(json.dumps(report, sort_keys=True, indent=2), flush=True)


def _x0_point(args, prob) -> list[float]:
    if args.x0 is not None:
        vals = [float(s) for s in args.x0.split(",")]
        if len(vals) != prob.dim:
            raise ExitRateError(f"--x0 needs {prob.dim} coordinates, got {len(vals)}")
        return vals
    return [0.5 * (lo + hi) for lo, hi in zip(prob.lo, prob.hi)]


def cmd_solve(args: argparse.Namespace) -> int:
    prob = _resolve_problem(args)
    h = args.h if args.h else default_spacing(prob)
    grid = build_grid(prob, h)
    gen = assemble_generator(grid, prob, args.action)
    pair = principal_eigenpair(gen, tol=args.tol)
    report = {
        "config": _config_dict(args, prob, h),
        "lam": pair.lam,
        "cw_interval": list(pair.cw_interval),
        "residual": pair.residual,
        "residual_left": pair.residual_left,
        "iterations": pair.iterations,
        "n_nodes": grid.n,
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        export_eigen_csv(grid, pair, os.path.join(args.out, "eigenpair.csv"))
    _emit(report, args, "solve_report")
    return 0


def cmd_optimize(args: argparse.Namespace) -> int:
    prob = _resolve_problem(args)
    h = args.h if args.h else default_spacing(prob)
    trace = policy_iteration(prob, h, mode=args.mode, tol=args.tol)
    report = {
        "config": _config_dict(args, prob, h),
        "lam": trace.lam,
        "sweeps": len(trace.steps),
        "converged": trace.converged,
        "lam_sequence": [s.lam for s in trace.steps],
        "changes_per_sweep": [s.n_changes for s in trace.steps],
        "cw_interval": list(trace.final_pair.cw_interval),
        "n_nodes": trace.grid.n,
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        export_trace_csv(trace, os.path.join(args.out, "trace.csv"))
        export_eigen_csv(trace.grid, trace.final_pair, os.path.join(args.out, "eigenpair.csv"))
    _emit(report, args, "optimize_report")
    return 0


def cmd_qprocess(args: argparse.Namespace) -> int:
    prob = _resolve_problem(args)
    h = args.h if args.h else default_spacing(prob)
    if prob.n_actions == 1:
        grid = build_grid(prob, h)
        gen = assemble_generator(grid, prob, 0)
        pair = principal_eigenpair(gen, tol=args.tol)
        policy = 0
    else:
        trace = policy_iteration(prob, h, mode=args.mode, tol=args.tol)
        grid, gen, pair = trace.grid, trace.final_generator, trace.final_pair
        policy = trace.final_policy
    model = doob_transform(gen, pair)
    mu, alpha = stationary_measures(gen, model, pair)
    _, rayleigh_rel = rayleigh_identity(grid, prob, model.psi_log, mu, pair.lam)
    rng = np.random.Generator(np.random.Philox(key=np.array([args.seed, 0xC11], dtype=np.uint64)))
    sup_gap = 0.0
    if grid.n <= 2000:
        for _ in range(3):
            _, _, gap = girsanov_check(gen, pair, 1.0, rng.random(grid.n))
            sup_gap = max(sup_gap, gap)
    x0 = int(grid.nearest_index(np.array([_x0_point(args, prob)]))[0])
    surv = survival_asymptotics(gen, pair, t_list=(1.0, 5.0, 10.0), x0_index=x0)
    cert = lyapunov_certificate(prob, h, policy, tol=args.tol)
    report = {
        "config": _config_dict(args, prob, h),
        "lam": pair.lam,
        "row_sum_residual": model.row_sum_residual,
        "product_residual": model.product_residual,
        "conjugation_sup_gap": sup_gap,
        "rayleigh_rel_err": rayleigh_rel,
        "survival": {
            "x0_index": x0,
            "rows": [list(r) for r in surv.rows],
            "limit": surv.limit_value,
            "tv_fit_rate": surv.tv_fit_rate,
            "spectral_gap": surv.spectral_gap,
        },
        "certificate": {"rho": cert.rho, "C": cert.C, "eps": cert.eps},
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        export_measures_csv(grid, model, pair, os.path.join(args.out, "measures.csv"), V=cert.V if cert.V.shape[0] == grid.n else None)
    _emit(report, args, "qprocess_report")
    return 0


def cmd_variational(args: argparse.Namespace) -> int:
    prob = _resolve_problem(args)
    h = args.h if args.h else default_spacing(prob)
    grid = build_grid(prob, h)
    tr_max = policy_iteration(prob, h, mode="MAX", tol=args.tol, grid=grid)
    cands = [candidate_from_trace("opt", tr_max)]
    if prob.n_actions > 1:
        tr_min = policy_iteration(prob, h, mode="MIN", tol=args.tol, grid=grid)
        cands.append(candidate_from_trace("anti", tr_min))
    w_grid = build_w_grid(grid, cands)
    lp = build_occupation_lp(grid, prob, w_grid, cands)
    sol = solve_lp(lp)
    tp = transform_point(lp, 0, tr_max.final_policy)
    model = doob_transform(tr_max.final_generator, tr_max.final_pair)
    mu, _ = stationary_measures(tr_max.final_generator, model, tr_max.final_pair)
    structure = verify_minimizer_structure(sol, mu, tr_max.final_policy, candidate=0)
    report = {
        "config": _config_dict(args, prob, h),
        "lp_value": sol.value,
        "lam_star": tr_max.lam,
        "rel_gap": abs(sol.value - tr_max.lam) / abs(tr_max.lam),
        "transform_point_objective": tp.objective,
        "n_variables": lp.n_variables,
        "n_wpoints": len(lp.w_grid),
        "iterations": sol.iterations,
        "feasibility_residual": sol.feasibility_residual,
        "structure": structure,
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        export_solution_csv(sol, os.path.join(args.out, "occupation.csv"), threshold=1e-12)
        export_mps(lp, os.path.join(args.out, "occupation.mps"))
    _emit(report, args, "variational_report")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    prob = _resolve_problem(args)
    h = args.h if args.h else default_spacing(prob)
    grid = build_grid(prob, h)
    if prob.n_actions == 1:
        gen = assemble_generator(grid, prob, 0)
        pair = principal_eigenpair(gen, tol=args.tol)
        policy = 0
    else:
        trace = policy_iteration(prob, h, mode=args.mode, tol=args.tol, grid=grid)
        gen, pair, policy = trace.final_generator, trace.final_pair, trace.final_policy
    x0 = _x0_point(args, prob)
    ens = simulate_killed(prob, policy, x0, dt=args.dt, T=args.T, n_paths=args.paths, seed=args.seed, grid=grid)
    est = estimate_exit_rate(ens, fit_window=(0.25 * args.T, 0.75 * args.T))
    model = doob_transform(gen, pair)
    mu, _ = stationary_measures(gen, model, pair)
    occ = simulate_qprocess(
        prob, grid, policy, model.psi_log, x0,
        dt=args.dt, T=args.T, n_paths=max(4, args.paths // 2048), seed=args.seed,
    )
    tv = 0.5 * float(np.abs(occ.histogram - mu).sum())

    def g(points: np.ndarray) -> np.ndarray:
        mid = np.array([0.5 * (lo + hi) for lo, hi in zip(prob.lo, prob.hi)])
        width = np.array([0.25 * (hi - lo) for lo, hi in zip(prob.lo, prob.hi)])
        return (np.abs(points - mid) < width).all(axis=1).astype(float)

    gir = mc_girsanov_check(
        prob, grid, policy, pair, g, t=min(1.0, args.T), x0=x0,
        n_killed=args.paths // 2, n_qpaths=args.paths // 5, seed=args.seed, dt=args.dt,
    )
    report = {
        "config": _config_dict(args, prob, h),
        "lam": pair.lam,
        "beta_hat": est.rate,
        "beta_stderr": est.stderr,
        "beta_abs_err": abs(est.rate - pair.lam),
        "occupancy_tv": tv,
        "killed_qpaths": occ.killed,
        "projections": occ.projections,
        "girsanov": {k: gir[k] for k in ("lhs", "rhs", "overlap")},
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        export_ensemble_csv(ens, os.path.join(args.out, "ensemble.csv"))
        export_histogram_csv(grid, occ.histogram, os.path.join(args.out, "occupancy.csv"))
    _emit(report, args, "simulate_report")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    report = run_acceptance(
        seed=args.seed,
        out_dir=args.out,
        mc_paths=args.paths,
        mc_dt=args.dt,
        q_T=args.T,
        tol=args.tol,
        echo=True,
    )
    print("all criteria passed" if report["all_passed"] else "FAILURES present", flush=True)
    return 0 if report["all_passed"] else 2


def cmd_representations(args: argparse.Namespace) -> int:
    prob = _resolve_problem(args)
    h = args.h if args.h else default_spacing(prob)
    rep = four_representations(prob, h, tol=args.tol)
    vals = rep["values"]
    labels = [
        "log_gradient_form",
        "log_gradient_family_min",
        "eigenfunction_ratio",
        "eigenfunction_ratio_family_min",
    ]
    report = {
        "config": _config_dict(args, prob, h),
        "values": dict(zip(labels, vals)),
        "max_pairwise_rel_diff": rep["max_pairwise_rel_diff"],
        "lam_star": rep["lam_star"],
        "n_policies": rep["n_policies"],
    }
    _emit(report, args, "representations_report")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitrate",
        description="Optimal exit rates of controlled diffusions: eigenvalue "
        "solvers, conditioned-process construction, and verification suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, mc: bool = False) -> None:
        p.add_argument("--problem", default="bm-interval", help="catalog name or problem JSON path")
        p.add_argument("--param", action="append", metavar="KEY=VAL", help="numeric problem parameter override")
        p.add_argument("--h", type=float, default=None, help="lattice spacing (default: problem-dependent)")
        p.add_argument("--mode", choices=("MAX", "MIN"), default="MAX")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--out", default=None, help="directory for the JSON report and CSV artifacts")
        p.add_argument("--x0", default=None, help="comma-separated start point")
        p.add_argument("--action", type=int, default=0, help="fixed action index for single-policy commands")
        if mc:
            p.add_argument("--dt", type=float, default=1e-4)
            p.add_argument("--T", type=float, default=2.0)
            p.add_argument("--paths", type=int, default=100_000)

    for name, fn, mc in (
        ("solve", cmd_solve, False),
        ("optimize", cmd_optimize, False),
        ("qprocess", cmd_qprocess, False),
        ("variational", cmd_variational, False),
        ("simulate", cmd_simulate, True),
        ("representations", cmd_representations, False),
    ):
        p = sub.add_parser(name)
        common(p, mc=mc)
        p.set_defaults(func=fn)

    pv = sub.add_parser("verify", help="run the full acceptance suite")
    pv.add_argument("--seed", type=int, default=DEFAULT_SEED)
    pv.add_argument("--tol", type=float, default=1e-10)
    pv.add_argument("--out", default=None)
    pv.add_argument("--dt", type=float, default=1e-4)
    pv.add_argument("--T", type=float, default=50.0)
    pv.add_argument("--paths", type=int, default=100_000)
    pv.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ExitRateError, FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
