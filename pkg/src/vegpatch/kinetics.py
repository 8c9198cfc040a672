"""Reaction terms, spatially uniform equilibria, and the stationary water solve.

The kinetic (space-free) system has a desert equilibrium (0, A) for all
parameters, two vegetated equilibria when rainfall exceeds twice the
mortality, and a single merged state (1, B) exactly at that threshold.  The
stationary water profile W(v) solves a linear elliptic problem and obeys the
maximum principle 0 <= W <= A, which is asserted on every solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discretization import Grid1D
from .tridiag import thomas_solve

EQ_DESERT = 1
EQ_LOWER = 2
EQ_UPPER = 3
EQ_MERGED = 4


@dataclass(frozen=True)
class ModelParams:
    """Kinetic and transport constants plus the model variant."""

    A: float                     # rainfall rate
    B: float                     # mortality rate
    d_v: float                   # plant dispersal rate
    d_w: float                   # water diffusion rate
    variant: str = "nonlocal"    # "nonlocal" | "local"
    kernel_family: str = "laplace"

    def __post_init__(self):
        for name in ("A", "B", "d_v", "d_w"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.variant not in ("nonlocal", "local"):
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class KineticEquilibrium:
    v_star: float
    w_star: float
    index: int   # EQ_DESERT, EQ_LOWER, EQ_UPPER, or EQ_MERGED


def constant_steady_states(A: float, B: float) -> list[KineticEquilibrium]:
    """All real uniform equilibria of the kinetic system, sorted by biomass.

    Always contains the desert state (0, A).  For A > 2B the vegetated pair
    (A -+ sqrt(A^2 - 4B^2)) / (2B) appears; at A == 2B the pair merges into
    (1, B).  Water values use w = A / (v^2 + 1), which is algebraically equal
    to the quotient form 2B^2 / (A -+ sqrt(...)) but avoids cancellation.
    """
    if A <= 0 or B <= 0:
        raise ValueError("A and B must be strictly positive")
    states = [KineticEquilibrium(0.0, A, EQ_DESERT)]
    if A == 2.0 * B:
        states.append(KineticEquilibrium(1.0, B, EQ_MERGED))
    elif A > 2.0 * B:
        root = math.sqrt(A * A - 4.0 * B * B)
        for v, idx in (((A - root) / (2.0 * B), EQ_LOWER),
                       ((A + root) / (2.0 * B), EQ_UPPER)):
            states.append(KineticEquilibrium(v, A / (v * v + 1.0), idx))
    return sorted(states, key=lambda s: s.v_star)


def vegetated_equilibrium(A: float, B: float) -> KineticEquilibrium:
    """The upper (largest-biomass) equilibrium; requires A >= 2B."""
    states = constant_steady_states(A, B)
    if len(states) == 1:
        raise ValueError(f"no vegetated equilibrium for A={A} <= 2B={2 * B}")
    return states[-1]


def solve_water_stationary(v: np.ndarray, params: ModelParams,
                           grid: Grid1D) -> np.ndarray:
    """Water profile solving d_w W'' - (v^2 + 1) W + A = 0, W(+-L) = 0.

    The tridiagonal system is strictly diagonally dominant, so plain Thomas
    elimination is exact for this structure.  The output is clipped against
    nothing: the discrete maximum principle 0 <= W <= A is asserted.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.n_nodes,):
        raise ValueError("v must be a node vector")
    if v.min() < 0:
        raise ValueError("v must be non-negative")
    h2 = grid.spacing ** 2
    m = grid.n_nodes - 2
    lower = np.full(m, params.d_w / h2)
    upper = np.full(m, params.d_w / h2)
    lower[0] = 0.0
    upper[-1] = 0.0
    diag = -2.0 * params.d_w / h2 - (v[1:-1] ** 2 + 1.0)
    rhs = np.full(m, -params.A)
    w_int = thomas_solve(lower, diag, upper, rhs)
    w = np.zeros(grid.n_nodes)
    w[1:-1] = w_int
    assert w.min() >= -1e-10 and w.max() <= params.A + 1e-10, \
        "water maximum principle violated"
    return w


def reaction_rhs(v: np.ndarray, w: np.ndarray, params: ModelParams):
    """Pointwise reaction terms (v^2 w - B v, -v^2 w - w + A)."""
    growth = v * v * w
    return growth - params.B * v, -growth - w + params.A


def scalar_f(v: np.ndarray, params: ModelParams, grid: Grid1D) -> np.ndarray:
    """Reduced vegetation nonlinearity f(v) = v^2 W(v) - B v."""
    w = solve_water_stationary(v, params, grid)
    return v * v * w - params.B * v
