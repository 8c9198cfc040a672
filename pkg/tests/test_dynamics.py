import numpy as np
import pytest

from vegpatch.discretization import build_operators, make_grid
from vegpatch.dynamics import (BatchCell, State, euler_step,
                               extinction_decay_check, initial_state,
                               perturbation_decay, run_to_steady,
                               run_to_steady_batch, simulate_horizon)
from vegpatch.errors import Blowup, EnvelopeViolated, UnstableTimestep
from vegpatch.experiments import cosine_perturbed_start
from vegpatch.kinetics import (ModelParams, solve_water_stationary,
                               vegetated_equilibrium)


@pytest.fixture(scope="module")
def small_ops(laplace):
    return build_operators(make_grid(10.0, 129), "nonlocal", laplace)


def test_bare_soil_single_step(small_ops, default_params):
    n = small_ops.grid.n_nodes
    state = initial_state(small_ops, np.zeros(n), np.zeros(n))
    h_t = 1e-3
    out = euler_step(state, small_ops, default_params, h_t)
    assert np.array_equal(out.v, np.zeros(n))
    assert np.allclose(out.w[1:-1], h_t * default_params.A, atol=1e-16)
    assert out.w[0] == 0.0 and out.w[-1] == 0.0
    assert out.step_count == 1 and out.t == pytest.approx(h_t)


def test_uniform_equilibrium_barely_moves_in_deep_interior(default_params,
                                                           laplace):
    ops = build_operators(make_grid(60.0, 401), "nonlocal", laplace)
    eq = vegetated_equilibrium(1.8, 0.45)
    n = ops.grid.n_nodes
    state = initial_state(ops, np.full(n, eq.v_star), np.full(n, eq.w_star))
    h_t = 1e-4
    out = euler_step(state, ops, default_params, h_t)
    center = n // 2
    # interior change is h_t * d_v * (boundary leakage) which is far below
    # the kernel tail mass at 30 length units
    assert abs(out.v[center] - eq.v_star) < 1e-12


def test_timestep_guard_rejects_unstable_config(default_params):
    ops = build_operators(make_grid(1.0, 201), "local")
    with pytest.raises(UnstableTimestep):
        run_to_steady(initial_state(ops, np.zeros(201), np.zeros(201)),
                      ops, default_params, h_t=1e-3)


def test_blowup_reports_step_and_node(small_ops, default_params):
    n = small_ops.grid.n_nodes
    state = initial_state(small_ops, np.full(n, 9e5), np.full(n, 1.8))
    with pytest.raises(Blowup) as err:
        state = euler_step(state, small_ops, default_params, h_t=1e-2)
    assert err.value.step == 1
    assert 0 <= err.value.node < n


def test_steady_convergence_to_uniform_state(default_params, laplace):
    ops = build_operators(make_grid(50.0, 401), "nonlocal", laplace)
    v0, w0 = cosine_perturbed_start(ops.grid, 1.8, 0.45)
    result = run_to_steady(initial_state(ops, v0, w0), ops, default_params,
                           h_t=1e-3, tol=1e-5, max_steps=200_000)
    eq = vegetated_equilibrium(1.8, 0.45)
    avg = float(ops.grid.quad_weights @ result.state.v) / 100.0
    assert result.converged
    assert avg == pytest.approx(eq.v_star, rel=0.05)


def test_collapse_below_critical_width(default_params, laplace):
    ops = build_operators(make_grid(1.0, 127), "nonlocal", laplace)
    v0, w0 = cosine_perturbed_start(ops.grid, 1.8, 0.45)
    result = run_to_steady(initial_state(ops, v0, w0), ops, default_params,
                           h_t=1e-3, tol=1e-5, max_steps=300_000)
    avg = float(ops.grid.quad_weights @ result.state.v) / 2.0
    assert result.converged
    assert avg < 0.1


def test_desert_initial_state_converges_immediately(small_ops,
                                                    default_params):
    grid = small_ops.grid
    w0 = solve_water_stationary(np.zeros(grid.n_nodes), default_params, grid)
    result = run_to_steady(initial_state(small_ops, np.zeros(grid.n_nodes), w0),
                           small_ops, default_params, h_t=1e-3, tol=1e-5)
    assert result.converged
    assert result.steps == 0


def test_invariant_region_and_water_bound(small_ops, default_params):
    grid = small_ops.grid
    w0 = solve_water_stationary(np.zeros(grid.n_nodes), default_params, grid)
    state = initial_state(small_ops, np.full(grid.n_nodes, 0.2), w0)
    result = run_to_steady(state, small_ops, default_params, h_t=1e-3,
                           tol=1e-5, max_steps=60_000, monitor_every=5)
    assert result.region_bound == pytest.approx(0.45 / 1.8)
    assert result.region_violations == 0
    assert result.max_v <= result.region_bound + 1e-8
    assert result.min_v >= -1e-12
    assert result.max_w <= max(w0.max(), default_params.A) + 1e-8


def test_trajectory_sampling(small_ops, default_params):
    grid = small_ops.grid
    w0 = solve_water_stationary(np.zeros(grid.n_nodes), default_params, grid)
    state = initial_state(small_ops, np.full(grid.n_nodes, 0.1), w0)
    result = run_to_steady(state, small_ops, default_params, h_t=1e-3,
                           tol=1e-5, max_steps=5_000, trajectory_every=100)
    track = result.trajectory
    assert track is not None and track.shape[1] == 5
    assert track[0, 0] == 0.0
    assert np.all(np.diff(track[:, 0]) > 0)


def test_simulate_horizon_step_count(small_ops, default_params):
    grid = small_ops.grid
    state = initial_state(small_ops, np.zeros(grid.n_nodes),
                          np.zeros(grid.n_nodes))
    out, track = simulate_horizon(state, small_ops, default_params,
                                  h_t=1e-3, t_final=0.05, trajectory_every=10)
    assert out.step_count == 50
    assert track.shape[0] == 6


class TestExtinctionDecay:
    def test_subcritical_level_decays(self, default_params, laplace):
        ops = build_operators(make_grid(25.0, 129), "nonlocal", laplace)
        report = extinction_decay_check(default_params, ops, 0.2,
                                        h_t=1e-3, t_final=40.0)
        assert report.threshold == pytest.approx(0.25)
        assert np.all(report.max_v <= report.envelope + report.envelope_slack)
        assert report.final_max_v < 1e-3
        assert report.final_water_gap < 1e-3

    def test_zero_level_stays_zero(self, default_params, laplace):
        ops = build_operators(make_grid(25.0, 129), "nonlocal", laplace)
        report = extinction_decay_check(default_params, ops, 0.0,
                                        h_t=1e-3, t_final=2.0)
        assert np.all(report.max_v == 0.0)

    def test_interval_endpoint_never_exceeded(self, default_params, laplace):
        # at the endpoint the envelope is the constant threshold level
        ops = build_operators(make_grid(25.0, 129), "nonlocal", laplace)
        report = extinction_decay_check(default_params, ops, 0.25,
                                        h_t=1e-3, t_final=10.0)
        assert np.all(report.envelope == pytest.approx(0.25))
        assert np.all(report.max_v <= 0.25 + report.envelope_slack)

    def test_rejects_levels_above_interval(self, default_params, laplace):
        ops = build_operators(make_grid(25.0, 129), "nonlocal", laplace)
        with pytest.raises(ValueError):
            extinction_decay_check(default_params, ops, 0.3)

    def test_envelope_violation_raises(self, default_params, laplace):
        # a state starting at the interval endpoint but with extra water
        # above the bound used by the envelope must trip the check
        ops = build_operators(make_grid(25.0, 129), "nonlocal", laplace)
        grid = ops.grid

        import vegpatch.dynamics as dyn
        template = dyn.decay_envelope

        def doctored(t, b, m, nu0):
            return template(t, b, m, nu0) - 0.01
        dyn.decay_envelope = doctored
        try:
            with pytest.raises(EnvelopeViolated):
                extinction_decay_check(default_params, ops, 0.24,
                                       h_t=1e-3, t_final=1.0)
        finally:
            dyn.decay_envelope = template


def test_batch_matches_single_runs(default_params, laplace, super_gaussian):
    grid = make_grid(6.0, 97)
    cells = []
    for kernel in (laplace, super_gaussian):
        ops = build_operators(grid, "nonlocal", kernel)
        v0, w0 = cosine_perturbed_start(grid, 1.8, 0.45)
        cells.append(BatchCell(ops, default_params, v0, w0))
    local_params = ModelParams(1.8, 0.45, 2.0, 0.1, "local")
    ops_local = build_operators(grid, "local")
    v0, w0 = cosine_perturbed_start(grid, 1.8, 0.45)
    cells.append(BatchCell(ops_local, local_params, v0, w0))

    batch = run_to_steady_batch(cells, h_t=1e-3, tol=1e-4, max_steps=40_000)
    for cell, got in zip(cells, batch):
        single = run_to_steady(initial_state(cell.ops, cell.v0, cell.w0),
                               cell.ops, cell.params, h_t=1e-3, tol=1e-4,
                               max_steps=40_000)
        assert got.converged == single.converged
        assert abs(got.steps - single.steps) <= 2
        assert np.allclose(got.state.v, single.state.v, atol=1e-8)
        assert np.allclose(got.state.w, single.state.w, atol=1e-8)


def test_perturbation_decay_negative_slope(default_params, laplace):
    # converge first, then kick by 1% and watch the gap shrink log-linearly
    ops = build_operators(make_grid(10.0, 129), "nonlocal", laplace)
    v0, w0 = cosine_perturbed_start(ops.grid, 1.8, 0.45)
    settled = run_to_steady(initial_state(ops, v0, w0), ops, default_params,
                            h_t=1e-3, tol=1e-6, max_steps=200_000)
    assert settled.converged
    times, gaps, slope = perturbation_decay(
        ops, default_params, settled.state.v, settled.state.w,
        amplitude=0.01, h_t=1e-3, t_final=12.0)
    assert slope < -0.01
    assert gaps[-1] < gaps[0]
