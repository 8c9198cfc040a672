"""CSV artifacts, manifests, and gnuplot scripts for experiment runs.

Floats are written with repr (shortest round-trip, up to 17 significant
digits) so regression diffs are exact; all rows are emitted in sorted order
so reruns with the same configuration produce bitwise-identical files.
"""
from __future__ import annotations

import json
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (BifurcationSuite, CriticalPatchResult, SweepRow)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    _write_csv(Path(path),
               ["variant", "kernel", "L", "N", "avg_biomass",
                "avg_biomass_nodes", "max_biomass", "steps", "converged"],
               [(r.variant, r.kernel, r.L, r.N, r.avg_biomass,
                 r.avg_biomass_nodes, r.max_biomass, r.steps, r.converged)
                for r in rows])


def write_lcrit_csv(path, results: list[CriticalPatchResult]) -> None:
    _write_csv(Path(path),
               ["variant", "kernel", "L_crit", "below_range", "threshold",
                "rule"],
               [(c.variant, c.kernel, c.L_crit, c.below_range, c.threshold,
                 c.rule) for c in results])


def write_branch_csv(path, suite: BifurcationSuite) -> None:
    rows = []
    for run in suite.runs:
        branch_id = f"dw{run.d_w:g}-{run.seed}"
        for pt in run.branch.points:
            rows.append((run.variant, run.kernel, branch_id, pt.index,
                         pt.s, pt.A, pt.max_v, pt.avg_v, pt.avg_v_nodes,
                         pt.stable))
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    _write_csv(Path(path),
               ["model", "kernel", "branch_id", "point_index", "arclength",
                "A", "max_v", "avg_v", "avg_v_nodes", "stable"], rows)


def write_folds_csv(path, suite: BifurcationSuite) -> None:
    rows = []
    for run in suite.runs:
        branch_id = f"dw{run.d_w:g}-{run.seed}"
        for fold in run.branch.folds:
            rows.append((run.variant, run.kernel, branch_id, fold.s, fold.A))
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    _write_csv(Path(path),
               ["model", "kernel", "branch_id", "arclength", "A"], rows)


def write_profile_csv(path, x: np.ndarray, v: np.ndarray,
                      w: np.ndarray | None = None) -> None:
    if w is None:
        _write_csv(Path(path), ["x", "v"], zip(x, v))
    else:
        _write_csv(Path(path), ["x", "v", "w"], zip(x, v, w))


def write_gallery_profiles(directory, suite: BifurcationSuite,
                           grids: dict) -> list[str]:
    """One profile CSV per gallery entry; returns the written names."""
    directory = Path(directory)
    written = []
    for g in sorted(suite.galleries,
                    key=lambda g: (g.variant, g.kernel, g.d_w, g.A)):
        name = (f"gallery-{g.variant}-{g.kernel or 'none'}-dw{g.d_w:g}"
                f"-A{g.A:g}.csv")
        grid = grids[(g.variant, g.kernel, g.d_w)]
        write_profile_csv(directory / name, grid.nodes, g.v, g.w)
        written.append(name)
    return written


def write_branch_snapshots(directory, suite: BifurcationSuite, grids: dict,
                           stride: int = 0) -> list[str]:
    """Profile CSVs for selected branch points (folds and every stride-th)."""
    directory = Path(directory)
    written = []
    for run in suite.runs:
        grid = grids[(run.variant, run.kernel, run.d_w)]
        n = grid.n_nodes
        chosen = {0, len(run.branch.points) - 1}
        if stride > 0:
            chosen.update(range(0, len(run.branch.points), stride))
        for fold in run.branch.folds:
            chosen.add(fold.after_index)
        for i in sorted(chosen):
            pt = run.branch.points[i]
            name = f"{pt.snapshot_id}.csv"
            write_profile_csv(directory / name, grid.nodes,
                              pt.snapshot[:n], pt.snapshot[n:])
            written.append(name)
    return written


def write_manifest(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = {
        "package": "vegpatch",
        "version": __version__,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    base.update(payload)
    with open(path, "w") as fh:
        json.dump(base, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return str(obj)


FIG1_SCRIPT = """\
# Regenerates the patch-sweep figure from sweep.csv / lcrit.csv.
set datafile separator ','
set logscale x
set xlabel 'habitat half-width L'
set ylabel 'average stationary biomass'
set key left top
plot \\
  'sweep_nonlocal_laplace.dat' using 1:2 with linespoints title 'non-local, fat tails', \\
  'sweep_nonlocal_super_gaussian.dat' using 1:2 with linespoints title 'non-local, thin tails', \\
  'sweep_local.dat' using 1:2 with linespoints title 'local'
"""

BRANCH_SCRIPT = """\
# Regenerates a bifurcation diagram from branch.csv exports (d_w = {dw}).
set datafile separator ','
set xlabel 'rainfall A'
set ylabel 'biomass'
set key left top
set arrow from 0.9, graph 0 to 0.9, graph 1 nohead dashtype 3 lc rgb 'purple'
plot \\
  'branch_nonlocal_laplace_dw{dw}.dat' using 1:2 with lines title 'max, fat tails', \\
  'branch_nonlocal_laplace_dw{dw}.dat' using 1:3 with lines title 'avg, fat tails', \\
  'branch_nonlocal_super_gaussian_dw{dw}.dat' using 1:2 with lines title 'max, thin tails', \\
  'branch_nonlocal_super_gaussian_dw{dw}.dat' using 1:3 with lines title 'avg, thin tails', \\
  'branch_local__dw{dw}.dat' using 1:2 with lines dashtype 2 title 'max, local', \\
  'branch_local__dw{dw}.dat' using 1:3 with lines dashtype 2 title 'avg, local', \\
  0.45/x with lines lc rgb 'red' title 'B/A'
"""


def write_plot_scripts(directory, rows: list[SweepRow] | None = None,
                       suite: BifurcationSuite | None = None) -> None:
    """Gnuplot scripts plus the per-curve data files they reference."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if rows is not None:
        for variant, kernel in sorted({(r.variant, r.kernel) for r in rows}):
            sel = [r for r in rows if (r.variant, r.kernel) == (variant, kernel)]
            name = f"sweep_{variant}_{kernel}.dat" if kernel else \
                f"sweep_{variant}.dat"
            _write_csv(directory / name, ["L", "avg_biomass", "max_biomass"],
                       [(r.L, r.avg_biomass, r.max_biomass) for r in sel])
        (directory / "fig_patch_sweep.gp").write_text(FIG1_SCRIPT)
    if suite is not None:
        d_ws = sorted({run.d_w for run in suite.runs})
        for d_w in d_ws:
            for run in suite.runs:
                if run.d_w != d_w or run.seed != "vegetated":
                    continue
                name = f"branch_{run.variant}_{run.kernel}_dw{d_w:g}.dat"
                _write_csv(directory / name, ["A", "max_v", "avg_v"],
                           [(pt.A, pt.max_v, pt.avg_v)
                            for pt in run.branch.points])
            script = BRANCH_SCRIPT.format(dw=f"{d_w:g}")
            (directory / f"fig_branches_dw{d_w:g}.gp").write_text(script)
