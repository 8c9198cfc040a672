import numpy as np
import pytest

from vegpatch.discretization import build_operators, make_grid
from vegpatch.experiments import (BifurcationConfig, fast_sweep_config,
                                  run_bifurcation_suite, run_patch_sweep)
from vegpatch.kernels import laplace_kernel, super_gaussian_kernel
from vegpatch.kinetics import ModelParams


@pytest.fixture(scope="session")
def laplace():
    return laplace_kernel()


@pytest.fixture(scope="session")
def super_gaussian():
    return super_gaussian_kernel()


@pytest.fixture(scope="session")
def default_params():
    return ModelParams(A=1.8, B=0.45, d_v=2.0, d_w=0.1)


@pytest.fixture(scope="session")
def bif_grid():
    """The bifurcation-experiment grid: half-width 25, floor(3 L) nodes."""
    return make_grid(25.0, 75)


@pytest.fixture(scope="session")
def bif_ops_laplace(bif_grid, laplace):
    return build_operators(bif_grid, "nonlocal", laplace)


@pytest.fixture(scope="session")
def fast_sweep_rows():
    """The reduced patch sweep (20 widths on [1, 10], all variants)."""
    return run_patch_sweep(fast_sweep_config())


@pytest.fixture(scope="session")
def bif_suite():
    """Full bifurcation suite at both diffusion rates, flags skipped."""
    return run_bifurcation_suite(BifurcationConfig(stability_stride=0))


def water_profile_oracle(x, L, A, d_w):
    """Analytic solution of d_w W'' - W + A = 0 with W(+-L) = 0.

    cosh(x/s)/cosh(L/s) evaluated in exponential form to stay finite for
    large L/s.
    """
    s = np.sqrt(d_w)
    ax = np.abs(x)
    ratio = np.exp((ax - L) / s) * (1.0 + np.exp(-2.0 * ax / s)) \
        / (1.0 + np.exp(-2.0 * L / s))
    return A * (1.0 - ratio)
