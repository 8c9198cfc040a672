"""Uniform grids and the discrete transport operators on (-L, L).

The non-local dispersal operator acts as (Kv)_i - v_i where K integrates the
kernel against the biomass field over the habitat only; mass dispersing past
the boundary is lost.  Two assembly schemes are provided:

* ``exact`` (default): K_ij integrates the kernel against the piecewise
  linear hat of node j with per-panel Gauss quadrature.  Row sums then equal
  the habitat-truncated kernel mass at the node to near machine precision,
  so they never exceed one and the operator's principal eigenvalue stays
  positive.  The fat-tailed exponential kernel has a kink at zero offset,
  which plain trapezoid sampling overshoots by O(h^2) with a large constant
  (about 7% at h = 0.68); the exact scheme is immune because all kinks land
  on panel boundaries.
* ``trapezoid``: K_ij = quad_weight_j * J(x_i - x_j).  Kept for parity with
  plain trapezoid convolution and for convergence studies; fine for smooth
  kernels, mass-inflating for kinked ones at coarse spacing.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BadGrid, DomainTooSmall, ResolutionWarning
from .kernels import Kernel, kernel_eval

DENSE_LIMIT = 4096
_GAUSS_ORDER = 24
_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(_GAUSS_ORDER)


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Uniform nodes on [-L, L] with composite-trapezoid quadrature weights."""

    half_width: float
    n_nodes: int
    spacing: float
    nodes: np.ndarray
    quad_weights: np.ndarray


def make_grid(half_width: float, n_nodes: int) -> Grid1D:
    if half_width <= 0:
        raise BadGrid(f"half-width must be positive, got {half_width}")
    if n_nodes < 3:
        raise BadGrid(f"need at least 3 nodes, got {n_nodes}")
    h = 2.0 * half_width / (n_nodes - 1)
    nodes = np.linspace(-half_width, half_width, n_nodes)
    weights = np.full(n_nodes, h)
    weights[0] = weights[-1] = h / 2.0
    return Grid1D(half_width=float(half_width), n_nodes=int(n_nodes),
                  spacing=h, nodes=nodes, quad_weights=weights)


def _gauss_panel(f, a: float, b: float) -> float:
    """Fixed-order Gauss-Legendre on one panel of a smooth integrand."""
    mid, rad = 0.5 * (b + a), 0.5 * (b - a)
    return rad * float(np.dot(_GAUSS_W, f(mid + rad * _GAUSS_X)))


class DispersalOperator:
    """Discrete non-local dispersal on a grid: apply(v) = K v - v.

    Dense K is materialized for n_nodes <= DENSE_LIMIT; above that the
    translation-invariant interior band plus the two boundary columns are
    applied matrix-free.  Instances are immutable after assembly apart from
    the principal-eigenvalue cache, which is an idempotent memo.
    """

    def __init__(self, grid: Grid1D, kernel: Kernel, scheme: str,
                 matrix: np.ndarray | None,
                 band: np.ndarray | None = None,
                 left_col: np.ndarray | None = None,
                 right_col: np.ndarray | None = None):
        self.grid = grid
        self.kernel = kernel
        self.scheme = scheme
        self.matrix = matrix
        self._band = band            # m_k for k in [-half_band, half_band]
        self._left_col = left_col    # K[:, 0]
        self._right_col = right_col  # K[:, -1]
        self.spectral_cache = None   # filled by spectral.principal_eigenvalue_nonlocal

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Operator action Kv - v; v may be (N,) or batched (..., N)."""
        if self.matrix is not None:
            return v @ self.matrix.T - v
        return self._apply_banded(v)

    def _apply_banded(self, v: np.ndarray) -> np.ndarray:
        if v.ndim != 1:
            return np.stack([self._apply_banded(row) for row in v])
        n = self.n_nodes
        hb = (self._band.shape[0] - 1) // 2
        full = np.convolve(v[1:-1], self._band)
        out = full[hb - 1:hb - 1 + n].copy()
        out += self._left_col * v[0] + self._right_col * v[-1]
        return out - v

    def row_sums(self) -> np.ndarray:
        return self.apply(np.ones(self.n_nodes)) + 1.0

    def export_csv(self, path) -> None:
        """Dump the dense matrix for cross-checks in external tools."""
        mat = self.matrix
        if mat is None:
            mat = _densify(self.n_nodes, self._band, self._left_col,
                           self._right_col)
        np.savetxt(path, mat, delimiter=",")


def _densify(n, band, left_col, right_col) -> np.ndarray:
    hb = (band.shape[0] - 1) // 2
    mat = np.zeros((n, n))
    for i in range(n):
        lo = max(1, i - hb)
        hi = min(n - 1, i + hb + 1)
        mat[i, lo:hi] = band[hb + i - np.arange(lo, hi)]
    mat[:, 0] = left_col
    mat[:, -1] = right_col
    return mat


def _hat_moments_exact(grid: Grid1D, kernel: Kernel):
    """Integrals of J against the hat basis, exploiting translation invariance.

    Returns (band, left_col, right_col) with band[hb + k] = integral of the
    full hat at node j against J centered k = i - j nodes away.  Kernel kinks
    at zero offset always sit on panel boundaries, so per-panel Gauss
    quadrature is accurate to near machine precision.
    """
    h = grid.spacing
    n = grid.n_nodes
    hb = min(n - 1, int(np.ceil(kernel.support_cutoff / h)) + 1)
    ks = np.arange(-hb, hb + 1)
    band = np.zeros(ks.shape[0])
    for idx, k in enumerate(ks):
        if (abs(k) - 1) * h > kernel.support_cutoff:
            continue
        up = _gauss_panel(lambda u: (1.0 - u / h) * kernel_eval(kernel, k * h - u), 0.0, h)
        dn = _gauss_panel(lambda u: (1.0 + u / h) * kernel_eval(kernel, k * h - u), -h, 0.0)
        band[idx] = up + dn

    # Boundary half-hats: node 0 spans [x_0, x_0 + h], node N-1 mirrors it.
    left = np.zeros(n)
    right = np.zeros(n)
    for i in range(n):
        if (i - 1) * h <= kernel.support_cutoff:
            left[i] = _gauss_panel(
                lambda u: (1.0 - u / h) * kernel_eval(kernel, i * h - u), 0.0, h)
        d = n - 1 - i
        if (d - 1) * h <= kernel.support_cutoff:
            right[i] = _gauss_panel(
                lambda u: (1.0 - u / h) * kernel_eval(kernel, u - d * h), 0.0, h)
    return band, left, right


def assemble_nonlocal(grid: Grid1D, kernel: Kernel,
                      scheme: str = "exact",
                      dense_limit: int = DENSE_LIMIT) -> DispersalOperator:
    """Assemble the discrete dispersal operator for one kernel on one grid."""
    if scheme not in ("exact", "trapezoid"):
        raise ValueError(f"unknown assembly scheme {scheme!r}")
    if grid.spacing > 0.5:
        warnings.warn(
            f"grid spacing {grid.spacing:.3f} exceeds 0.5; unit-width kernels "
            "are under-resolved", ResolutionWarning, stacklevel=2)

    if scheme == "trapezoid":
        offsets = grid.nodes[:, None] - grid.nodes[None, :]
        mat = grid.quad_weights[None, :] * kernel_eval(kernel, offsets)
        return DispersalOperator(grid, kernel, scheme, mat)

    band, left, right = _hat_moments_exact(grid, kernel)
    if grid.n_nodes <= dense_limit:
        mat = _densify(grid.n_nodes, band, left, right)
        return DispersalOperator(grid, kernel, scheme, mat)
    return DispersalOperator(grid, kernel, scheme, None,
                             band=band, left_col=left, right_col=right)


class LaplacianOperator:
    """Second-order centered Laplacian with homogeneous Dirichlet closure."""

    def __init__(self, grid: Grid1D):
        self.grid = grid

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Stencil (1, -2, 1)/h^2 with zero ghost values outside the nodes."""
        h2 = self.grid.spacing ** 2
        out = -2.0 * u
        out[..., :-1] += u[..., 1:]
        out[..., 1:] += u[..., :-1]
        return out / h2

    def dense(self) -> np.ndarray:
        n = self.n_nodes
        h2 = self.grid.spacing ** 2
        mat = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1)
               + np.diag(np.ones(n - 1), -1)) / h2
        return mat

    def interior_bands(self):
        """(lower, diag, upper) for the N-2 interior rows with zero boundary."""
        m = self.n_nodes - 2
        h2 = self.grid.spacing ** 2
        lower = np.full(m, 1.0 / h2)
        diag = np.full(m, -2.0 / h2)
        upper = np.full(m, 1.0 / h2)
        lower[0] = 0.0
        upper[-1] = 0.0
        return lower, diag, upper


def assemble_laplacian(grid: Grid1D) -> LaplacianOperator:
    return LaplacianOperator(grid)


@dataclass(frozen=True, eq=False)
class Operators:
    """Transport operators for one model variant on one grid."""

    grid: Grid1D
    variant: str                      # "nonlocal" | "local"
    dispersal: DispersalOperator | None
    laplacian: LaplacianOperator
    kernel: Kernel | None = None


def build_operators(grid: Grid1D, variant: str, kernel: Kernel | None = None,
                    scheme: str = "exact") -> Operators:
    lap = assemble_laplacian(grid)
    if variant == "local":
        return Operators(grid, "local", None, lap, None)
    if variant != "nonlocal":
        raise ValueError(f"unknown variant {variant!r}")
    if kernel is None:
        raise ValueError("nonlocal variant needs a kernel")
    disp = assemble_nonlocal(grid, kernel, scheme=scheme)
    return Operators(grid, "nonlocal", disp, lap, kernel)


def taylor_consistency(op: DispersalOperator, profile: np.ndarray) -> float:
    """Sup-norm gap between dispersal and half-Laplacian on deep-interior nodes.

    For unit-variance kernels the dispersal of a smooth profile equals half
    its Laplacian up to a fourth-moment correction; this diagnostic measures
    that gap on nodes at least a cutoff-distance from the boundary, where no
    kernel mass is lost.
    """
    grid = op.grid
    interior = np.abs(grid.nodes) <= grid.half_width - op.kernel.support_cutoff
    if not interior.any():
        raise DomainTooSmall(
            f"no node is {op.kernel.support_cutoff:g} away from the boundary "
            f"of (-{grid.half_width:g}, {grid.half_width:g})")
    lap = assemble_laplacian(grid)
    gap = op.apply(profile) - 0.5 * lap.apply(profile)
    return float(np.max(np.abs(gap[interior])))
