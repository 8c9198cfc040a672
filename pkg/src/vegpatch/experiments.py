"""The two headline experiments: patch-size sweep and bifurcation diagrams.

The sweep integrates all three model variants (non-local with fat and thin
tails, local diffusion) to steady state over a logarithmic ladder of habitat
half-widths and extracts the critical patch size per variant as the largest
half-width whose average stationary biomass stays below a collapse threshold.
The bifurcation suite traces desert and vegetated stationary branches in the
rainfall rate for slow and fast water diffusion and collects fold locations
plus a gallery of upper-branch profiles.

Average biomass is reported both as the trapezoid (integral) mean over the
habitat and as the arithmetic node mean; detection and acceptance checks use
the integral mean.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .continuation import (Branch, PalcControls, StationaryResidual,
                           palc_continue, solve_stationary, stability_flag)
from .discretization import Grid1D, build_operators, make_grid
from .dynamics import BatchCell, run_to_steady_batch
from .errors import NewtonDiverged, SingularJacobian
from .kernels import Kernel, laplace_kernel, super_gaussian_kernel
from .kinetics import (ModelParams, solve_water_stationary,
                       vegetated_equilibrium)

VARIANTS = (("nonlocal", "laplace"),
            ("nonlocal", "super_gaussian"),
            ("local", ""))


def builtin_kernel(family: str) -> Kernel:
    if family == "laplace":
        return laplace_kernel()
    if family == "super_gaussian":
        return super_gaussian_kernel()
    raise ValueError(f"unknown kernel family {family!r}")


def cosine_perturbed_start(grid: Grid1D, A: float, B: float,
                           amplitude: float = 0.01):
    """Uniform vegetated state with a small cosine bump vanishing at +-L."""
    eq = vegetated_equilibrium(A, B)
    profile = np.cos(np.pi * grid.nodes / (2.0 * grid.half_width))
    v0 = eq.v_star * (1.0 + amplitude * profile)
    w0 = np.full(grid.n_nodes, eq.w_star)
    return v0, w0


@dataclass(frozen=True)
class SweepConfig:
    L_values: tuple[float, ...]
    A: float = 1.8
    B: float = 0.45
    d_v: float = 2.0
    d_w: float = 0.1
    h_t: float = 1e-4
    tol: float = 1e-5
    max_steps: int = 2_000_000
    n_min: int = 128
    nodes_per_L: float = 8.0
    perturbation: float = 0.01
    threshold: float = 0.1
    scheme: str = "exact"
    variants: tuple = VARIANTS
    workers: int = 1


def log_spaced_L(n_points: int, lo: float = 1.0, hi: float = 100.0):
    return tuple(float(x) for x in np.logspace(math.log10(lo), math.log10(hi),
                                               n_points))


def full_sweep_config(workers: int = 1) -> SweepConfig:
    """Full 50-point sweep over L in [1, 100] at the reference step size."""
    return SweepConfig(L_values=log_spaced_L(50), workers=workers)


def fast_sweep_config(workers: int = 1) -> SweepConfig:
    """Reduced 20-point sweep over L in [1, 10]; coarser time step.

    Intended for the quick ordering-and-bracketing check.  Non-local cells
    share the minimum node count and advance as one batch; local cells at
    small widths get stability-capped grids of their own.  The larger step
    stays inside the explicit stability bounds, and the unchanged tolerance
    makes the stopping rule strictly tighter per unit time.
    """
    return SweepConfig(L_values=log_spaced_L(20, 1.0, 10.0), h_t=1e-3,
                       max_steps=300_000, workers=workers)


def sweep_resolution(cfg: SweepConfig, L: float,
                     variant: str = "nonlocal") -> int:
    """Node count for one sweep cell: resolution rule capped by stability.

    The base rule keeps at least n_min nodes and nodes_per_L per unit
    half-width.  Node counts are then capped so the explicit diffusion
    numbers (vegetation d_v/2 for the local variant, water d_w for all)
    stay at or below 0.4 for the configured time step.
    """
    n = max(cfg.n_min, int(math.ceil(cfg.nodes_per_L * L)))
    caps = [cfg.d_w]
    if variant == "local":
        caps.append(0.5 * cfg.d_v)
    for d in caps:
        h_min = math.sqrt(d * cfg.h_t / 0.4)
        n = min(n, max(3, int(math.floor(2.0 * L / h_min)) + 1))
    return n


@dataclass(frozen=True)
class SweepRow:
    variant: str
    kernel: str
    L: float
    N: int
    avg_biomass: float
    avg_biomass_nodes: float
    max_biomass: float
    steps: int
    converged: bool


@dataclass(frozen=True)
class CriticalPatchResult:
    variant: str
    kernel: str
    L_crit: float           # nan when no swept width collapsed
    below_range: bool
    threshold: float
    rule: str


def _sweep_group(cfg: SweepConfig, n_nodes: int,
                 group: list[tuple[float, str, str]]) -> list[SweepRow]:
    """Integrate every (L, variant) cell sharing one node count as a batch."""
    cells = []
    for L, variant, kernel_family in group:
        grid = make_grid(L, n_nodes)
        kernel = builtin_kernel(kernel_family) if kernel_family else None
        ops = build_operators(grid, variant, kernel, scheme=cfg.scheme)
        params = ModelParams(cfg.A, cfg.B, cfg.d_v, cfg.d_w, variant,
                             kernel_family or "")
        v0, w0 = cosine_perturbed_start(grid, cfg.A, cfg.B, cfg.perturbation)
        cells.append(BatchCell(ops, params, v0, w0,
                               tag=(variant, kernel_family, L)))
    results = run_to_steady_batch(cells, cfg.h_t, cfg.tol, cfg.max_steps)
    rows = []
    for cell, res in zip(cells, results):
        variant, kernel_family, L = cell.tag
        grid = cell.ops.grid
        v = res.state.v
        rows.append(SweepRow(
            variant=variant, kernel=kernel_family, L=L, N=grid.n_nodes,
            avg_biomass=float(grid.quad_weights @ v) / (2.0 * grid.half_width),
            avg_biomass_nodes=float(v.mean()),
            max_biomass=float(v.max()),
            steps=res.steps, converged=res.converged))
    return rows


def _sweep_group_spec(args):
    cfg_kwargs, n_nodes, group = args
    return _sweep_group(SweepConfig(**cfg_kwargs), n_nodes, group)


def run_patch_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """Steady-state rows for every (half-width, variant) cell of the sweep.

    Cells sharing a node count are advanced together; groups run in parallel
    when cfg.workers > 1.  Rows come back sorted by (variant, kernel, L) so
    repeated runs produce identical files.
    """
    groups: dict[int, list[tuple[float, str, str]]] = {}
    for L in cfg.L_values:
        for variant, kernel_family in cfg.variants:
            n = sweep_resolution(cfg, L, variant)
            groups.setdefault(n, []).append((L, variant, kernel_family))

    rows: list[SweepRow] = []
    if cfg.workers > 1 and len(groups) > 1:
        cfg_kwargs = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
        tasks = [(cfg_kwargs, n, group) for n, group in sorted(groups.items())]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for part in pool.map(_sweep_group_spec, tasks):
                rows.extend(part)
    else:
        for n, group in sorted(groups.items()):
            rows.extend(_sweep_group(cfg, n, group))
    rows.sort(key=lambda r: (r.variant, r.kernel, r.L))
    return rows


def detect_critical_L(rows: list[SweepRow],
                      threshold: float = 0.1) -> list[CriticalPatchResult]:
    """Largest swept half-width whose converged biomass average collapsed."""
    out = []
    keys = sorted({(r.variant, r.kernel) for r in rows})
    rule = f"largest swept L with integral-mean biomass < {threshold:g}"
    for variant, kernel in keys:
        collapsed = [r.L for r in rows
                     if r.variant == variant and r.kernel == kernel
                     and r.converged and r.avg_biomass < threshold]
        if collapsed:
            out.append(CriticalPatchResult(variant, kernel, max(collapsed),
                                           False, threshold, rule))
        else:
            out.append(CriticalPatchResult(variant, kernel, math.nan,
                                           True, threshold, rule))
    return out


@dataclass(frozen=True)
class BifurcationConfig:
    A_start: float = 3.0
    A_range: tuple[float, float] = (0.1, 3.0)
    B: float = 0.45
    d_v: float = 2.0
    d_w_values: tuple[float, ...] = (0.1, 80.0)
    L: float = 25.0
    nodes_per_L: float = 3.0
    perturbation: float = 0.01
    scheme: str = "exact"
    variants: tuple = VARIANTS
    controls: PalcControls = PalcControls()
    stability_stride: int = 25
    gallery_A: tuple[float, ...] = (1.2, 1.5, 2.0)
    gallery_d_w: float = 80.0
    workers: int = 1


@dataclass
class BranchRun:
    variant: str
    kernel: str
    d_w: float
    seed: str                # "vegetated" | "desert"
    branch: Branch


@dataclass
class GalleryProfile:
    variant: str
    kernel: str
    d_w: float
    A: float
    v: np.ndarray
    w: np.ndarray
    source_id: str


@dataclass
class BifurcationSuite:
    runs: list[BranchRun] = field(default_factory=list)
    galleries: list[GalleryProfile] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def _flag_selected(sr: StationaryResidual, branch: Branch, stride: int):
    if stride <= 0:
        return
    chosen = set(range(0, len(branch.points), stride))
    chosen.add(len(branch.points) - 1)
    for i in chosen:
        pt = branch.points[i]
        pt.stable = stability_flag(sr, pt.A, pt.snapshot)


def _trace_cell(cfg: BifurcationConfig, variant: str, kernel_family: str,
                d_w: float, suite: BifurcationSuite) -> None:
    n = int(math.floor(cfg.nodes_per_L * cfg.L))
    grid = make_grid(cfg.L, n)
    kernel = builtin_kernel(kernel_family) if kernel_family else None
    ops = build_operators(grid, variant, kernel, scheme=cfg.scheme)
    params = ModelParams(cfg.A_start, cfg.B, cfg.d_v, d_w, variant,
                         kernel_family or "")
    sr = StationaryResidual(ops, params)
    tag = f"{variant}-{kernel_family or 'none'}-dw{d_w:g}"

    # Vegetated branch, seeded from the cosine-perturbed uniform state.
    try:
        v0, w0 = cosine_perturbed_start(grid, cfg.A_start, cfg.B,
                                        cfg.perturbation)
        if variant == "local":
            v0 = v0.copy()
            v0[0] = v0[-1] = 0.0
        w0[0] = w0[-1] = 0.0
        u0, _ = solve_stationary(sr, cfg.A_start, sr.join(v0, w0),
                                 tol=cfg.controls.newton_tol)
        branch = palc_continue(sr, cfg.A_start, cfg.A_range, u0,
                               cfg.controls, label=f"{tag}-veg")
        _flag_selected(sr, branch, cfg.stability_stride)
        suite.runs.append(BranchRun(variant, kernel_family, d_w,
                                    "vegetated", branch))
        if d_w == cfg.gallery_d_w:
            _collect_gallery(cfg, sr, branch, variant, kernel_family, d_w,
                             suite)
    except (NewtonDiverged, SingularJacobian) as exc:
        suite.errors.append(f"{tag} vegetated: {exc}")

    # Desert branch: zero biomass with its stationary water profile.
    try:
        w_desert = solve_water_stationary(np.zeros(n), params, grid)
        ud, _ = solve_stationary(sr, cfg.A_start,
                                 sr.join(np.zeros(n), w_desert),
                                 tol=cfg.controls.newton_tol)
        branch = palc_continue(sr, cfg.A_start, cfg.A_range, ud,
                               cfg.controls, label=f"{tag}-desert")
        _flag_selected(sr, branch, cfg.stability_stride)
        suite.runs.append(BranchRun(variant, kernel_family, d_w,
                                    "desert", branch))
    except (NewtonDiverged, SingularJacobian) as exc:
        suite.errors.append(f"{tag} desert: {exc}")


def _collect_gallery(cfg, sr, branch, variant, kernel_family, d_w, suite):
    """Polished upper-branch profiles at the requested rainfall values."""
    for a_req in cfg.gallery_A:
        window = max(2.0 * cfg.controls.ds_max, 0.1)
        candidates = [pt for pt in branch.points
                      if abs(pt.A - a_req) <= window and pt.max_v > 0.1]
        if not candidates:
            suite.errors.append(
                f"{variant}-{kernel_family or 'none'}-dw{d_w:g}: no branch "
                f"point near A={a_req:g} for the gallery")
            continue
        seed = max(candidates, key=lambda pt: pt.max_v)
        try:
            u, _ = solve_stationary(sr, a_req, seed.snapshot,
                                    tol=cfg.controls.newton_tol)
        except (NewtonDiverged, SingularJacobian):
            continue
        v, w = sr.split(u)
        suite.galleries.append(GalleryProfile(
            variant, kernel_family, d_w, a_req, v.copy(), w.copy(),
            source_id=seed.snapshot_id))


def run_bifurcation_suite(cfg: BifurcationConfig) -> BifurcationSuite:
    """Trace all branches for every (variant, kernel, d_w) cell."""
    suite = BifurcationSuite()
    for d_w in cfg.d_w_values:
        for variant, kernel_family in cfg.variants:
            _trace_cell(cfg, variant, kernel_family, d_w, suite)
    return suite


def boundary_sharpness(profile: np.ndarray, grid: Grid1D,
                       desert_floor: float = 1e-2) -> float:
    """Outermost vegetated node value over the profile maximum.

    Non-local stationary states keep a strictly positive value at the last
    habitat node (a discontinuity proxy), while local profiles slide to zero
    there and the ratio shrinks with the grid spacing.  Desert profiles
    return exactly zero.
    """
    vmax = float(profile.max())
    if vmax <= desert_floor:
        return 0.0
    vegetated = np.flatnonzero(profile > 1e-8 * vmax)
    outer = vegetated[np.argmax(np.abs(grid.nodes[vegetated]))]
    return float(profile[outer]) / vmax
