"""Principal eigenvalues of the transport operators and the extinction test.

beta1 is the principal eigenvalue of the negated dispersal operator; it lies
in (0, 1] because the dispersal matrix K is non-negative with row sums below
one, so its spectral radius mu_max is below one and beta1 = 1 - mu_max.
Extinction of vegetation is guaranteed whenever d_v * beta1 exceeds the
Lipschitz constant of the reduced nonlinearity, and beta1 shrinks as the
habitat grows, which is what produces a critical patch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import DispersalOperator, LaplacianOperator
from .kinetics import ModelParams, scalar_f
from .tridiag import thomas_solve


@dataclass(frozen=True)
class EigResult:
    value: float
    residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SpectralReport:
    beta1: float
    lambda1: float
    eigvec_residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class LipschitzEstimate:
    """Sampled slope bound for the reduced nonlinearity.

    The value is certified from below only: it is the largest finite
    difference quotient seen over the sampled biomass levels, so the true
    Lipschitz constant can only be larger.
    """

    value: float
    n_samples: int
    v_range: float
    certified_from_below: bool = True


def _symmetrized_weighted(op: DispersalOperator) -> np.ndarray:
    """Similarity transform D^(1/2) K D^(-1/2) with D the quadrature weights."""
    if op.matrix is None:
        raise ValueError("spectral routines need a dense dispersal matrix")
    d = op.grid.quad_weights
    s = np.sqrt(d)
    return (s[:, None] * op.matrix) / s[None, :]


def _power_iteration(mat: np.ndarray, res_tol: float, max_iter: int):
    """Dominant eigenpair by power iteration with residual-based stopping.

    One matvec per iteration: the Rayleigh quotient and the eigenpair
    residual are both read off the same product, and the iteration stops
    when the residual (relative to the eigenvalue scale) meets res_tol.
    """
    x = np.ones(mat.shape[0])
    x /= np.linalg.norm(x)
    rho = 0.0
    resid = np.inf
    for it in range(1, max_iter + 1):
        y = mat @ x
        rho = float(x @ y)
        resid = float(np.linalg.norm(y - rho * x))
        if resid <= res_tol * max(abs(rho), 1.0):
            return rho, resid, it, True
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, 0.0, it, True
        x = y / ny
    return rho, resid, it, False


def principal_eigenvalue_nonlocal(op: DispersalOperator, tol: float = 1e-10,
                                  max_iter: int = 50_000,
                                  use_cache: bool = True) -> EigResult:
    """beta1 = 1 - mu_max(K) by power iteration on the weighted symmetrization.

    Stops when the eigenpair residual drops below tol (relative to the
    eigenvalue scale).  On hitting the iteration cap the best estimate is
    returned with converged=False rather than raising; the residual tells
    how far it got.  Results are memoized on the operator.
    """
    if use_cache and op.spectral_cache is not None:
        return op.spectral_cache
    mat = _symmetrized_weighted(op)
    mu, resid, iters, ok = _power_iteration(mat, tol, max_iter)
    result = EigResult(value=1.0 - mu, residual=resid, iterations=iters,
                       converged=ok)
    if use_cache:
        op.spectral_cache = result
    return result


def principal_eigenvalue_nonlocal_dense(op: DispersalOperator) -> float:
    """Dense-eigensolve oracle for beta1 (test cross-check path)."""
    mat = _symmetrized_weighted(op)
    if np.allclose(mat, mat.T, atol=1e-12):
        mu = float(np.linalg.eigvalsh(mat)[-1])
    else:
        mu = float(np.linalg.eigvals(mat).real.max())
    return 1.0 - mu


def principal_eigenvalue_laplacian(op: LaplacianOperator, tol: float = 1e-12,
                                   max_iter: int = 10_000) -> EigResult:
    """Smallest eigenvalue of the Dirichlet -Laplacian by inverse iteration."""
    m = op.n_nodes - 2
    lower, diag, upper = op.interior_bands()
    lower, diag, upper = -lower, -diag, -upper   # bands of -Laplacian
    x = np.sin(np.pi * np.arange(1, m + 1) / (m + 1))
    x /= np.linalg.norm(x)
    lam = 0.0
    resid = np.inf
    for it in range(1, max_iter + 1):
        ax = _tridiag_apply(lower, diag, upper, x)
        lam = float(x @ ax)
        resid = float(np.linalg.norm(ax - lam * x))
        if resid <= tol * max(abs(lam), 1.0):
            return EigResult(lam, resid, it, True)
        y = thomas_solve(lower, diag, upper, x)
        x = y / np.linalg.norm(y)
    return EigResult(lam, resid, it, False)


def _tridiag_apply(lower, diag, upper, x):
    out = diag * x
    out[1:] += lower[1:] * x[:-1]
    out[:-1] += upper[:-1] * x[1:]
    return out


def extinction_criterion(beta1: float, d_v: float, m_lipschitz: float):
    """Sufficient test d_v * beta1 > M; returns (guaranteed, margin)."""
    if beta1 <= 0:
        raise ValueError("beta1 must be positive")
    if m_lipschitz < 0:
        raise ValueError("Lipschitz constant must be non-negative")
    margin = d_v * beta1 - m_lipschitz
    return margin > 0.0, margin


def estimate_lipschitz_M(params: ModelParams, grid, v_range: float,
                         n_samples: int = 400) -> LipschitzEstimate:
    """Max finite-difference slope of f over uniform biomass levels.

    Scans constant profiles v in [0, v_range] and returns the largest
    sup-norm quotient |f(v_k+1) - f(v_k)| / (v_k+1 - v_k).
    """
    if v_range <= 0:
        raise ValueError("v_range must be positive")
    levels = np.linspace(0.0, v_range, n_samples + 1)
    ones = np.ones(grid.n_nodes)
    prev = scalar_f(levels[0] * ones, params, grid)
    best = 0.0
    for lo, hi in zip(levels[:-1], levels[1:]):
        cur = scalar_f(hi * ones, params, grid)
        quot = float(np.max(np.abs(cur - prev))) / (hi - lo)
        best = max(best, quot)
        prev = cur
    return LipschitzEstimate(value=best, n_samples=n_samples + 1,
                             v_range=v_range)
