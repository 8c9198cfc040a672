import math

import numpy as np
import pytest

from vegpatch.continuation import (PalcControls, StationaryResidual, newton,
                                   palc_continue, rightmost_eigenvalue_dense,
                                   solve_stationary, stability_flag)
from vegpatch.discretization import build_operators, make_grid
from vegpatch.dynamics import initial_state, simulate_horizon
from vegpatch.errors import NewtonDiverged, SingularJacobian
from vegpatch.kinetics import (ModelParams, constant_steady_states,
                               solve_water_stationary, vegetated_equilibrium)


class ToyFold:
    """Scalar branch x^2 = 1 - A with a fold at A = 1."""

    n_unknowns = 1

    def residual(self, u, A):
        return np.array([u[0] ** 2 - (1.0 - A)])

    def jacobian(self, u, A):
        return np.array([[2.0 * u[0]]])

    def d_dA(self, u, A):
        return np.array([1.0])


class TestNewton:
    def test_scalar_quadratic(self):
        x, iters = newton(lambda x: x**2 - 4.0,
                          lambda x: np.array([[2.0 * x[0]]]),
                          np.array([3.0]), tol=1e-10)
        assert abs(x[0] - 2.0) < 1e-10
        assert iters <= 7

    def test_divergence_detected(self):
        with pytest.raises(NewtonDiverged):
            newton(lambda x: x**2 + 1.0,
                   lambda x: np.array([[2.0 * x[0]]]),
                   np.array([0.5]), max_iter=40)

    def test_singular_jacobian_detected(self):
        with pytest.raises(SingularJacobian):
            newton(lambda x: np.array([1.0 + 0 * x[0]]),
                   lambda x: np.array([[0.0]]),
                   np.array([1.0]))


class TestToyContinuation:
    def test_traces_through_fold(self):
        branch = palc_continue(ToyFold(), 0.0, (-0.5, 1.5), np.array([1.0]),
                               PalcControls(ds0=0.01, direction=1.0))
        assert branch.termination == "parameter_exit"
        xs = [pt.snapshot[0] for pt in branch.points]
        assert min(xs) < -0.5    # returned along the lower half-branch
        assert len(branch.folds) == 1
        assert abs(branch.folds[0].A - 1.0) <= 1e-6

    def test_tangent_sign_changes_only_at_folds(self):
        branch = palc_continue(ToyFold(), 0.0, (-0.5, 1.5), np.array([1.0]),
                               PalcControls(ds0=0.01, direction=1.0))
        tangents = [pt.tangent_A for pt in branch.points]
        flips = sum(1 for a, b in zip(tangents, tangents[1:]) if a * b < 0)
        assert flips == len(branch.folds)

    def test_initial_point_must_be_solved(self):
        with pytest.raises(NewtonDiverged):
            palc_continue(ToyFold(), 0.0, (-0.5, 1.5), np.array([2.0]),
                          PalcControls())

    def test_fold_cap_termination(self):
        branch = palc_continue(ToyFold(), 0.0, (-0.5, 1.5), np.array([1.0]),
                               PalcControls(ds0=0.01, direction=1.0,
                                            fold_cap=1))
        assert branch.termination == "fold_count_cap"
        assert len(branch.folds) == 1

    def test_step_failure_when_no_step_can_be_corrected(self):
        # residual is exact at the seed but non-finite everywhere else, so
        # every corrector attempt fails and the step size underflows
        class Wall:
            n_unknowns = 1

            def residual(self, u, A):
                if A == 0.0 and u[0] == 1.0:
                    return np.array([0.0])
                return np.array([np.nan])

            def jacobian(self, u, A):
                return np.array([[1.0]])

            def d_dA(self, u, A):
                return np.array([0.5])

        branch = palc_continue(Wall(), 0.0, (-1.0, 1.0), np.array([1.0]),
                               PalcControls(ds0=0.01, direction=1.0,
                                            ds_min=1e-5))
        assert branch.termination == "step_failure"
        assert len(branch.points) == 1   # only the seed point


@pytest.fixture(scope="module")
def habitat_sr(bif_ops_laplace):
    params = ModelParams(3.0, 0.45, 2.0, 0.1)
    return StationaryResidual(bif_ops_laplace, params)


class TestStationarySolve:
    def test_vegetated_solution_near_uniform_state(self, habitat_sr):
        sr = habitat_sr
        grid = sr.ops.grid
        eq = vegetated_equilibrium(3.0, 0.45)
        profile = np.cos(np.pi * grid.nodes / (2 * grid.half_width))
        guess = sr.join(eq.v_star * (1 + 0.01 * profile),
                        np.full(grid.n_nodes, eq.w_star))
        u, iters = solve_stationary(sr, 3.0, guess)
        v3 = (3.0 + math.sqrt(3.0**2 - 4 * 0.45**2)) / (2 * 0.45)
        assert iters <= 20
        assert float(u[:grid.n_nodes].max()) == pytest.approx(v3, rel=0.10)
        assert np.linalg.norm(sr.residual(u, 3.0)) <= 1e-10

    def test_zero_guess_lands_on_desert_branch(self, habitat_sr):
        sr = habitat_sr
        grid = sr.ops.grid
        u, _ = solve_stationary(sr, 3.0, np.zeros(2 * grid.n_nodes))
        v, w = sr.split(u)
        w_oracle = solve_water_stationary(np.zeros(grid.n_nodes), sr.params,
                                          grid)
        assert np.max(np.abs(v)) <= 1e-10
        assert np.max(np.abs(w - w_oracle)) <= 1e-8


class TestJacobian:
    @pytest.mark.parametrize("variant", ["nonlocal", "local"])
    def test_matches_central_differences(self, variant, laplace):
        grid = make_grid(25.0, 75)
        kernel = laplace if variant == "nonlocal" else None
        ops = build_operators(grid, variant, kernel)
        sr = StationaryResidual(ops, ModelParams(1.8, 0.45, 2.0, 0.1))
        rng = np.random.default_rng(42)
        n = sr.n_unknowns
        for _ in range(20):
            u = np.concatenate([rng.uniform(0.0, 4.0, grid.n_nodes),
                                rng.uniform(0.0, 1.8, grid.n_nodes)])
            direction = rng.normal(size=n)
            direction /= np.linalg.norm(direction)
            scale = max(1.0, float(np.abs(u).max()))
            eps = 1e-6 * scale
            jv = sr.jacobian(u, 1.8) @ direction
            fd = (sr.residual(u + eps * direction, 1.8)
                  - sr.residual(u - eps * direction, 1.8)) / (2 * eps)
            denom = max(np.linalg.norm(jv), 1e-12)
            assert np.linalg.norm(jv - fd) / denom <= 1e-6


@pytest.fixture(scope="module")
def vegetated_branch(habitat_sr):
    sr = habitat_sr
    grid = sr.ops.grid
    eq = vegetated_equilibrium(3.0, 0.45)
    profile = np.cos(np.pi * grid.nodes / (2 * grid.half_width))
    guess = sr.join(eq.v_star * (1 + 0.01 * profile),
                    np.full(grid.n_nodes, eq.w_star))
    u, _ = solve_stationary(sr, 3.0, guess)
    return palc_continue(sr, 3.0, (0.1, 3.0), u, PalcControls(), label="veg")


class TestHabitatContinuation:

    def test_fold_near_kinetic_threshold(self, vegetated_branch):
        assert vegetated_branch.folds
        assert 0.85 <= vegetated_branch.folds[0].A <= 1.00

    def test_all_points_reverify_residual(self, habitat_sr,
                                          vegetated_branch):
        for pt in vegetated_branch.points:
            res = np.linalg.norm(habitat_sr.residual(pt.snapshot, pt.A))
            assert res <= 1e-10

    def test_biomass_floor_along_branch(self, vegetated_branch):
        for pt in vegetated_branch.points:
            if pt.max_v > 0.01:
                assert pt.max_v >= 0.45 / pt.A

    def test_tangent_flips_match_folds(self, vegetated_branch):
        tangents = [pt.tangent_A for pt in vegetated_branch.points]
        flips = sum(1 for a, b in zip(tangents, tangents[1:]) if a * b < 0)
        assert flips == len(vegetated_branch.folds)

    def test_desert_branch_spans_range_with_zero_biomass(self, habitat_sr):
        sr = habitat_sr
        grid = sr.ops.grid
        w0 = solve_water_stationary(np.zeros(grid.n_nodes), sr.params, grid)
        u0, _ = solve_stationary(sr, 3.0, sr.join(np.zeros(grid.n_nodes), w0))
        branch = palc_continue(sr, 3.0, (0.1, 3.0), u0, PalcControls(),
                               label="desert")
        As = [pt.A for pt in branch.points]
        assert branch.termination == "parameter_exit"
        assert min(As) < 0.1
        assert max(pt.max_v for pt in branch.points) <= 1e-8

    def test_point_cap_termination(self, habitat_sr):
        sr = habitat_sr
        grid = sr.ops.grid
        w0 = solve_water_stationary(np.zeros(grid.n_nodes), sr.params, grid)
        u0, _ = solve_stationary(sr, 3.0, sr.join(np.zeros(grid.n_nodes), w0))
        branch = palc_continue(sr, 3.0, (0.1, 3.0), u0,
                               PalcControls(point_cap=5))
        assert branch.termination == "point_cap"
        assert len(branch.points) == 5


class TestStabilityFlag:
    def test_desert_stable_below_threshold(self, bif_ops_laplace):
        params = ModelParams(0.5, 0.45, 2.0, 0.1)
        sr = StationaryResidual(bif_ops_laplace, params)
        grid = sr.ops.grid
        w0 = solve_water_stationary(np.zeros(grid.n_nodes), params, grid)
        u, _ = solve_stationary(sr, 0.5, sr.join(np.zeros(grid.n_nodes), w0))
        assert stability_flag(sr, 0.5, u) is True

    @pytest.fixture()
    def branch_points_at_1_8(self, habitat_sr, vegetated_branch):
        # harvest one point per side of the fold and polish both at the
        # same rainfall; the post-fold side is the middle branch
        sr = habitat_sr
        fold_idx = vegetated_branch.folds[0].after_index
        before = [pt for pt in vegetated_branch.points[:fold_idx + 1]]
        after = [pt for pt in vegetated_branch.points[fold_idx + 1:]]
        out = {}
        for name, pts in (("upper", before), ("middle", after)):
            seed = min(pts, key=lambda pt: abs(pt.A - 1.8))
            u, _ = solve_stationary(sr, 1.8, seed.snapshot)
            out[name] = u
        upper_v = out["upper"][:sr.n_nodes]
        middle_v = out["middle"][:sr.n_nodes]
        assert upper_v.max() > 2.0
        assert middle_v.max() < 1.0
        return sr, out

    def test_upper_branch_stable(self, branch_points_at_1_8):
        sr, pts = branch_points_at_1_8
        assert stability_flag(sr, 1.8, pts["upper"]) is True
        assert rightmost_eigenvalue_dense(sr, 1.8, pts["upper"]) < 0

    def test_middle_branch_unstable(self, branch_points_at_1_8):
        sr, pts = branch_points_at_1_8
        assert stability_flag(sr, 1.8, pts["middle"]) is False
        assert rightmost_eigenvalue_dense(sr, 1.8, pts["middle"]) > 0

    def test_middle_branch_instability_confirmed_by_dynamics(
            self, branch_points_at_1_8, bif_ops_laplace):
        # perturb-and-simulate oracle: the trajectory leaves the snapshot
        sr, pts = branch_points_at_1_8
        grid = sr.ops.grid
        v, w = sr.split(pts["middle"])
        params = ModelParams(1.8, 0.45, 2.0, 0.1)
        state = initial_state(bif_ops_laplace, v * 1.01, w.copy())
        out, _ = simulate_horizon(state, bif_ops_laplace, params,
                                  h_t=1e-3, t_final=20.0)
        gap0 = 0.01 * float(np.abs(v).max())
        assert np.max(np.abs(out.v - v)) > 10.0 * gap0
