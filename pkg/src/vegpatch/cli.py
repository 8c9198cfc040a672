"""Command-line front end: experiments, diagnostics, and output management.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 regression-check failure (only with --check).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from .config import Resolver, finalize, make_resolver, resolve_output_dir
from .continuation import PalcControls
from .discretization import build_operators, make_grid
from .dynamics import (State, initial_state, run_to_steady, simulate_horizon)
from .errors import ConfigError, VegpatchError
from .experiments import (BifurcationConfig, SweepConfig, builtin_kernel,
                          cosine_perturbed_start, detect_critical_L,
                          fast_sweep_config, full_sweep_config, log_spaced_L,
                          run_bifurcation_suite, run_patch_sweep,
                          sweep_resolution)
from .kernels import check_assumptions, kernel_from_table
from .kinetics import (ModelParams, constant_steady_states,
                       solve_water_stationary)
from .outputs import (write_branch_csv, write_branch_snapshots,
                      write_folds_csv, write_gallery_profiles,
                      write_lcrit_csv, write_manifest, write_plot_scripts,
                      write_profile_csv, write_sweep_csv)
from .spectral import (SpectralReport, estimate_lipschitz_M,
                       extinction_criterion, principal_eigenvalue_laplacian,
                       principal_eigenvalue_nonlocal)

# Regression targets for --check: critical patch sizes of the standard sweep
# configuration, with a +-20% band covering the log-grid spacing and the
# resolution policy.
LCRIT_REFERENCE = {("nonlocal", "laplace"): 1.46,
                   ("nonlocal", "super_gaussian"): 1.76,
                   ("local", ""): 2.33}
LCRIT_BAND = 0.20
FOLD_BAND = (0.85, 1.00)
BIOMASS_FLOOR_CUT = 0.01


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.handler(args)
    except ConfigError as exc:
        _error_summary("config", exc)
        return 2
    except VegpatchError as exc:
        _error_summary("numerical", exc)
        return 3


def _error_summary(kind: str, exc: Exception) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__,
                      "message": str(exc)}), file=sys.stderr)


def _run_config_payload(res: Resolver, experiment: str, outdir,
                        workers: int = 1) -> dict:
    cfg = finalize(res, experiment, outdir, workers)
    return {"experiment": cfg.experiment, "output_dir": str(cfg.output_dir),
            "workers": cfg.workers, "resolved": cfg.sections}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vegpatch",
        description="Non-local vegetation-water dynamics on finite habitats")
    parser.set_defaults(command=None)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="INI config file; flags override it")
        p.add_argument("--out", help="output directory (under $VEGPATCH_OUT)")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: available cores)")

    pk = sub.add_parser("kernels", help="kernel admissibility checks")
    pk.add_argument("action", choices=["check"])
    pk.add_argument("--family", choices=["laplace", "super_gaussian"],
                    help="built-in kernel family")
    pk.add_argument("--table", help="two-column text table (z, J(z)) for a "
                    "custom kernel, linearly interpolated")
    pk.set_defaults(handler=cmd_kernels)

    ps = sub.add_parser("spectral", help="principal eigenvalues vs habitat size")
    common(ps)
    ps.add_argument("--L", type=float, action="append", required=True,
                    help="habitat half-width (repeatable)")
    ps.add_argument("--kernel", default="laplace",
                    choices=["laplace", "super_gaussian"])
    ps.add_argument("--spacing", type=float, default=0.05,
                    help="grid spacing used for every width")
    ps.add_argument("--dv", type=float, default=None)
    ps.add_argument("--M", type=float, default=None,
                    help="Lipschitz constant; sampled estimate when omitted")
    ps.set_defaults(handler=cmd_spectral)

    for name, help_text in (("simulate", "integrate to a fixed horizon"),
                            ("steady", "integrate to the steady-state criterion")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        _add_model_flags(p)
        p.add_argument("--init", default="cosine",
                       help="initial data: cosine | desert | uniform:LEVEL")
        p.add_argument("--dump-every", type=int, default=None,
                       help="trajectory sample cadence in steps")
        if name == "simulate":
            p.add_argument("--t-final", type=float, default=None)
        p.set_defaults(handler=cmd_simulate if name == "simulate" else cmd_steady)

    pw = sub.add_parser("sweep", help="critical patch size sweep")
    common(pw)
    pw.add_argument("--preset", choices=["full", "fast"], default=None,
                    help="full: 50 points on [1,100]; fast: 20 on [1,10]")
    pw.add_argument("--points", type=int, default=None)
    pw.add_argument("--L-min", type=float, default=None)
    pw.add_argument("--L-max", type=float, default=None)
    pw.add_argument("--ht", type=float, default=None)
    pw.add_argument("--max-steps", type=int, default=None)
    pw.add_argument("--threshold", type=float, default=None)
    pw.add_argument("--no-plots", action="store_true")
    pw.add_argument("--check", action="store_true",
                    help="verify ordering and brackets; exit 4 on failure")
    pw.set_defaults(handler=cmd_sweep)

    pb = sub.add_parser("bifurcate", help="rainfall bifurcation diagrams")
    common(pb)
    pb.add_argument("--dw", type=float, action="append", default=None,
                    help="water diffusion rate (repeatable; default 0.1 and 80)")
    pb.add_argument("--L", type=float, default=None)
    pb.add_argument("--snapshot-stride", type=int, default=None,
                    help="also dump every k-th branch point profile")
    pb.add_argument("--no-plots", action="store_true")
    pb.add_argument("--check", action="store_true",
                    help="verify floor, folds, and sub-threshold patterns")
    pb.set_defaults(handler=cmd_bifurcate)
    return parser


def _add_model_flags(p) -> None:
    p.add_argument("--A", type=float, default=None)
    p.add_argument("--B", type=float, default=None)
    p.add_argument("--dv", type=float, default=None)
    p.add_argument("--dw", type=float, default=None)
    p.add_argument("--variant", choices=["nonlocal", "local"], default=None)
    p.add_argument("--kernel", choices=["laplace", "super_gaussian"],
                   default=None)
    p.add_argument("--L", type=float, default=None)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--ht", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-steps", type=int, default=None)


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    return os.cpu_count() or 1


def cmd_kernels(args) -> int:
    if args.table:
        kernel = kernel_from_table(args.table)
        label = f"custom table {args.table}"
    elif args.family:
        kernel = builtin_kernel(args.family)
        label = args.family
    else:
        raise ConfigError("kernels check needs --family or --table")
    report = check_assumptions(kernel)
    rows = [
        ("positivity", report.positivity,
         f"min J = {report.min_value:.3e}, J(0) = {report.value_at_zero:.6g}"),
        ("symmetry", report.symmetry,
         f"max |J(z)-J(-z)| = {report.max_asymmetry:.3e}"),
        ("decay", report.decay,
         f"J(cutoff) = {report.value_at_cutoff:.3e}"),
        ("finite second moment", report.finite_second_moment,
         f"m2 = {report.second_moment:.9g}"),
        ("normalization", report.normalization,
         f"mass = {report.mass:.9g}"),
    ]
    print(f"kernel: {label} (cutoff {kernel.support_cutoff:g}, "
          f"tail: {kernel.tail_label or 'n/a'})")
    for name, ok, measure in rows:
        print(f"  {name:22s} {'pass' if ok else 'FAIL':4s}  {measure}")
    return 0 if report.all_pass() else 3


def cmd_spectral(args) -> int:
    res = make_resolver(args.config)
    d_v = res.get("model", "d_v", float, 2.0, args.dv)
    A = res.get("model", "A", float, 1.8)
    B = res.get("model", "B", float, 0.45)
    d_w = res.get("model", "d_w", float, 0.1)
    kernel = builtin_kernel(args.kernel)
    lines = ["L,beta1,lambda1,extinction_guaranteed"]
    for L in args.L:
        n = max(3, int(round(2.0 * L / args.spacing)) + 1)
        grid = make_grid(L, n)
        ops = build_operators(grid, "nonlocal", kernel)
        beta = principal_eigenvalue_nonlocal(ops.dispersal)
        lam = principal_eigenvalue_laplacian(ops.laplacian)
        report = SpectralReport(
            beta1=beta.value, lambda1=lam.value,
            eigvec_residual=max(beta.residual, lam.residual),
            iterations=beta.iterations + lam.iterations,
            converged=beta.converged and lam.converged)
        if args.M is not None:
            m_const = args.M
        else:
            params = ModelParams(A, B, d_v, d_w)
            v3 = max(s.v_star for s in constant_steady_states(A, B))
            m_const = estimate_lipschitz_M(params, grid,
                                           v_range=max(1.0, v3)).value
        guaranteed, _margin = extinction_criterion(report.beta1, d_v, m_const)
        lines.append(f"{L!r},{report.beta1!r},{report.lambda1!r},"
                     f"{'true' if guaranteed else 'false'}")
    print(f"# d_v = {d_v!r}; M from sampled lower-bound estimator unless "
          "--M given")
    print("\n".join(lines))
    if args.out is not None:
        outdir = resolve_output_dir(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "spectral.csv").write_text("\n".join(lines) + "\n")
        write_manifest(outdir / "manifest.json", {
            **_run_config_payload(res, "spectral", outdir),
            "L": args.L, "kernel": args.kernel, "spacing": args.spacing})
    return 0


def _resolve_model(args, res: Resolver):
    A = res.get("model", "A", float, 1.8, args.A)
    B = res.get("model", "B", float, 0.45, args.B)
    d_v = res.get("model", "d_v", float, 2.0, args.dv)
    d_w = res.get("model", "d_w", float, 0.1, args.dw)
    variant = res.get("model", "variant", str, "nonlocal", args.variant)
    kernel_family = res.get("model", "kernel", str, "laplace", args.kernel)
    L = res.get("grid", "L", float, 25.0, args.L)
    n_default = max(3, int(math.floor(3 * L)))
    n = res.get("grid", "N", int, n_default, args.nodes)
    try:
        params = ModelParams(A, B, d_v, d_w, variant,
                             kernel_family if variant == "nonlocal" else "")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    grid = make_grid(L, n)
    kernel = builtin_kernel(kernel_family) if variant == "nonlocal" else None
    scheme = res.get("grid", "scheme", str, "exact")
    ops = build_operators(grid, variant, kernel, scheme=scheme)
    return params, grid, ops


def _initial_from_flag(spec: str, params, grid, ops) -> State:
    if spec == "cosine":
        v0, w0 = cosine_perturbed_start(grid, params.A, params.B)
        return initial_state(ops, v0, w0)
    w_desert = solve_water_stationary(np.zeros(grid.n_nodes), params, grid)
    if spec == "desert":
        return initial_state(ops, np.zeros(grid.n_nodes), w_desert)
    if spec.startswith("uniform:"):
        level = float(spec.split(":", 1)[1])
        return initial_state(ops, np.full(grid.n_nodes, level), w_desert)
    raise ConfigError(f"unknown --init {spec!r}")


def cmd_simulate(args) -> int:
    res = make_resolver(args.config)
    params, grid, ops = _resolve_model(args, res)
    h_t = res.get("integration", "h_t", float, 1e-4, args.ht)
    t_final = res.get("integration", "t_final", float, 10.0,
                      getattr(args, "t_final", None))
    every = res.get("integration", "trajectory_every", int, 100,
                    args.dump_every)
    state0 = _initial_from_flag(args.init, params, grid, ops)
    t0 = time.time()
    state, track = simulate_horizon(state0, ops, params, h_t, t_final,
                                    trajectory_every=every)
    outdir = resolve_output_dir(args.out, "simulate-out")
    outdir.mkdir(parents=True, exist_ok=True)
    write_profile_csv(outdir / "final_profile.csv", grid.nodes, state.v,
                      state.w)
    if track.size:
        _write_trajectory(outdir / "trajectory.csv", track)
    write_manifest(outdir / "manifest.json", {
        **_run_config_payload(res, "simulate", outdir), "init": args.init,
        "wall_time_s": time.time() - t0, "steps": state.step_count})
    print(f"simulated to t={state.t:g} ({state.step_count} steps); "
          f"outputs in {outdir}")
    return 0


def _write_trajectory(path, track) -> None:
    with open(path, "w") as fh:
        fh.write("t,min_v,max_v,avg_v,max_w\n")
        for row in track:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def cmd_steady(args) -> int:
    res = make_resolver(args.config)
    params, grid, ops = _resolve_model(args, res)
    h_t = res.get("integration", "h_t", float, 1e-4, args.ht)
    tol = res.get("integration", "tol", float, 1e-5, args.tol)
    max_steps = res.get("integration", "max_steps", int, 2_000_000,
                        args.max_steps)
    every = res.get("integration", "trajectory_every", int, 0,
                    args.dump_every)
    state0 = _initial_from_flag(args.init, params, grid, ops)
    t0 = time.time()
    result = run_to_steady(state0, ops, params, h_t, tol, max_steps,
                           trajectory_every=every)
    outdir = resolve_output_dir(args.out, "steady-out")
    outdir.mkdir(parents=True, exist_ok=True)
    write_profile_csv(outdir / "final_profile.csv", grid.nodes,
                      result.state.v, result.state.w)
    if result.trajectory is not None and result.trajectory.size:
        _write_trajectory(outdir / "trajectory.csv", result.trajectory)
    write_manifest(outdir / "manifest.json", {
        **_run_config_payload(res, "steady", outdir), "init": args.init,
        "wall_time_s": time.time() - t0, "converged": result.converged,
        "steps": result.steps, "last_step_delta": result.last_step_delta,
        "region_violations": result.region_violations})
    print(f"steady: converged={result.converged} steps={result.steps} "
          f"delta={result.last_step_delta:.3e}; outputs in {outdir}")
    if not result.converged:
        _error_summary("numerical",
                       VegpatchError("steady state not reached"))
        return 3
    return 0


def _sweep_config_from(args, res: Resolver) -> SweepConfig:
    preset = res.get("sweep", "preset", str, "full", args.preset)
    if preset == "fast":
        cfg = fast_sweep_config()
    elif preset == "full":
        cfg = full_sweep_config()
    else:
        raise ConfigError(f"unknown sweep preset {preset!r}")
    points = res.get("sweep", "points", int, len(cfg.L_values), args.points)
    lo = res.get("sweep", "L_min", float, cfg.L_values[0], args.L_min)
    hi = res.get("sweep", "L_max", float, cfg.L_values[-1], args.L_max)
    h_t = res.get("integration", "h_t", float, cfg.h_t, args.ht)
    max_steps = res.get("integration", "max_steps", int, cfg.max_steps,
                        args.max_steps)
    threshold = res.get("sweep", "threshold", float, cfg.threshold,
                        args.threshold)
    A = res.get("model", "A", float, cfg.A)
    B = res.get("model", "B", float, cfg.B)
    d_v = res.get("model", "d_v", float, cfg.d_v)
    d_w = res.get("model", "d_w", float, cfg.d_w)
    scheme = res.get("grid", "scheme", str, cfg.scheme)
    return SweepConfig(L_values=log_spaced_L(points, lo, hi), A=A, B=B,
                       d_v=d_v, d_w=d_w, h_t=h_t, tol=cfg.tol,
                       max_steps=max_steps, n_min=cfg.n_min,
                       nodes_per_L=cfg.nodes_per_L, threshold=threshold,
                       scheme=scheme, workers=_workers(args))


def cmd_sweep(args) -> int:
    res = make_resolver(args.config)
    cfg = _sweep_config_from(args, res)
    t0 = time.time()
    rows = run_patch_sweep(cfg)
    crit = detect_critical_L(rows, cfg.threshold)
    outdir = resolve_output_dir(args.out, "sweep-out")
    outdir.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(outdir / "sweep.csv", rows)
    write_lcrit_csv(outdir / "lcrit.csv", crit)
    if not args.no_plots:
        write_plot_scripts(outdir / "plots", rows=rows)
    write_manifest(outdir / "manifest.json", {
        **_run_config_payload(res, "sweep", outdir, cfg.workers),
        "config": {f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
        "grid_policy": {
            "rule": "N = max(n_min, ceil(nodes_per_L * L)), capped by the "
                    "explicit stability bound",
            "per_cell": {f"{v}-{k}-L{L:g}": sweep_resolution(cfg, L, v)
                         for L in cfg.L_values for v, k in cfg.variants}},
        "biomass_mean": "integral (trapezoid) mean used for detection",
        "rng": "deterministic (no random seeds used)",
        "wall_time_s": time.time() - t0,
        "L_crit": {f"{c.variant}-{c.kernel}": c.L_crit for c in crit}})
    for c in crit:
        print(f"L_crit[{c.variant}{'-' + c.kernel if c.kernel else ''}] = "
              f"{c.L_crit:.4f}" + ("  (below swept range)" if c.below_range
                                   else ""))
    print(f"sweep outputs in {outdir} ({time.time() - t0:.1f} s)")
    if args.check:
        failures = _check_sweep(crit)
        for f in failures:
            print("CHECK FAIL:", f)
        if failures:
            return 4
        print("CHECK PASS: ordering and brackets")
    return 0


def _check_sweep(crit) -> list[str]:
    failures = []
    by_key = {(c.variant, c.kernel): c for c in crit}
    try:
        lap = by_key[("nonlocal", "laplace")].L_crit
        sup = by_key[("nonlocal", "super_gaussian")].L_crit
        loc = by_key[("local", "")].L_crit
    except KeyError as exc:
        return [f"missing variant in sweep: {exc}"]
    if any(math.isnan(x) for x in (lap, sup, loc)):
        failures.append("a variant never collapsed inside the swept range")
        return failures
    if not lap < sup < loc:
        failures.append(
            f"ordering violated: laplace {lap:.3f}, super_gaussian "
            f"{sup:.3f}, local {loc:.3f}")
    for key, value in (("nonlocal-laplace", lap),
                       ("nonlocal-super_gaussian", sup), ("local", loc)):
        ref = LCRIT_REFERENCE[{"nonlocal-laplace": ("nonlocal", "laplace"),
                               "nonlocal-super_gaussian": ("nonlocal", "super_gaussian"),
                               "local": ("local", "")}[key]]
        lo, hi = ref * (1 - LCRIT_BAND), ref * (1 + LCRIT_BAND)
        if not lo <= value <= hi:
            failures.append(
                f"L_crit[{key}] = {value:.3f} outside [{lo:.3f}, {hi:.3f}]")
    return failures


def cmd_bifurcate(args) -> int:
    res = make_resolver(args.config)
    d_w_values = tuple(args.dw) if args.dw else \
        res.get("bifurcation", "d_w_values", "floats", (0.1, 80.0))
    L = res.get("bifurcation", "L", float, 25.0, args.L)
    B = res.get("model", "B", float, 0.45)
    d_v = res.get("model", "d_v", float, 2.0)
    scheme = res.get("grid", "scheme", str, "exact")
    gallery_A = res.get("bifurcation", "gallery_A", "floats", (1.2, 1.5, 2.0))
    stride = res.get("bifurcation", "stability_stride", int, 25)
    controls = PalcControls(
        ds0=res.get("continuation", "ds0", float, 0.01),
        ds_min=res.get("continuation", "ds_min", float, 1e-6),
        ds_max=res.get("continuation", "ds_max", float, 0.1),
        point_cap=res.get("continuation", "point_cap", int, 20_000),
        newton_tol=res.get("continuation", "newton_tol", float, 1e-10))
    cfg = BifurcationConfig(B=B, d_v=d_v, d_w_values=d_w_values, L=L,
                            scheme=scheme, controls=controls,
                            stability_stride=stride, gallery_A=gallery_A)
    t0 = time.time()
    suite = run_bifurcation_suite(cfg)
    outdir = resolve_output_dir(args.out, "bifurcate-out")
    outdir.mkdir(parents=True, exist_ok=True)
    grids = {}
    n = int(math.floor(cfg.nodes_per_L * cfg.L))
    for d_w in d_w_values:
        for variant, kernel in cfg.variants:
            grids[(variant, kernel, d_w)] = make_grid(cfg.L, n)
    write_branch_csv(outdir / "branch.csv", suite)
    write_folds_csv(outdir / "folds.csv", suite)
    profiles_dir = outdir / "profiles"
    written = write_gallery_profiles(profiles_dir, suite, grids)
    written += write_branch_snapshots(profiles_dir, suite, grids,
                                      stride=args.snapshot_stride or 0)
    if not args.no_plots:
        write_plot_scripts(outdir / "plots", suite=suite)
    cfg_echo = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__
                if f != "controls"}
    cfg_echo["controls"] = {f: getattr(cfg.controls, f)
                            for f in cfg.controls.__dataclass_fields__}
    write_manifest(outdir / "manifest.json", {
        **_run_config_payload(res, "bifurcate", outdir, _workers(args)),
        "config": cfg_echo,
        "grid": {"L": cfg.L, "N": n},
        "rng": "deterministic (no random seeds used)",
        "profiles": written, "suite_errors": suite.errors,
        "folds": {f"{r.variant}-{r.kernel}-dw{r.d_w:g}-{r.seed}":
                  [f.A for f in r.branch.folds] for r in suite.runs},
        "wall_time_s": time.time() - t0})
    for run in suite.runs:
        folds = ", ".join(f"{f.A:.4f}" for f in run.branch.folds) or "none"
        print(f"{run.variant}{'-' + run.kernel if run.kernel else ''} "
              f"d_w={run.d_w:g} {run.seed}: {len(run.branch.points)} points, "
              f"folds at [{folds}], {run.branch.termination}")
    print(f"bifurcation outputs in {outdir} ({time.time() - t0:.1f} s)")
    if args.check:
        failures = _check_bifurcation(suite, cfg)
        for f in failures:
            print("CHECK FAIL:", f)
        if failures:
            return 4
        print("CHECK PASS: biomass floor, fold band, sub-threshold patterns")
    return 0


def _check_bifurcation(suite, cfg) -> list[str]:
    failures = []
    for run in suite.runs:
        for pt in run.branch.points:
            if pt.max_v > BIOMASS_FLOOR_CUT and pt.max_v < cfg.B / pt.A:
                failures.append(
                    f"biomass floor violated on {run.variant}-{run.kernel} "
                    f"d_w={run.d_w:g} at A={pt.A:.4f}: max_v={pt.max_v:.4f} "
                    f"< B/A={cfg.B / pt.A:.4f}")
                break
    slow = [r for r in suite.runs if r.d_w == 0.1 and r.seed == "vegetated"]
    for run in slow:
        if not run.branch.folds:
            failures.append(f"no fold on {run.variant}-{run.kernel} d_w=0.1")
            continue
        a_fold = run.branch.folds[0].A
        if not FOLD_BAND[0] <= a_fold <= FOLD_BAND[1]:
            failures.append(
                f"fold of {run.variant}-{run.kernel} d_w=0.1 at "
                f"{a_fold:.4f} outside {FOLD_BAND}")
    fast = [r for r in suite.runs if r.d_w == 80.0 and r.variant == "nonlocal"]
    if fast and not any(pt.A < 2 * cfg.B and pt.max_v > 0.1
                        for r in fast for pt in r.branch.points):
        failures.append("no non-local point with A < 2B and max_v > 0.1 "
                        "at d_w=80")
    return failures


if __name__ == "__main__":
    sys.exit(main())
