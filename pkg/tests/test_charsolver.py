import numpy as np
import pytest
from conftest import point_mass, quiet

from repairctl import (
    InvalidParameterError,
    SpatialGrid,
    StepSizeError,
    SystemState,
    build_schedule,
    build_travel_map,
    closed_loop_stage_solve,
    compatible_state,
    make_linear_target,
    make_quadratic_target,
    open_loop_solve,
    staged_control_solve,
    static_repair_rate,
    steady_state,
    total_mass,
    x_norm_distance,
)
from repairctl.errors import VanishingDataWarning


def test_travel_map_linear(grid, target):
    tm = build_travel_map(target, 1.0, 1, grid)
    x = np.array([0.0, 0.3, 1.0])
    assert tm.forward(x) == pytest.approx((2 / 3) * (x - x**2 / 2), abs=1e-15)
    assert tm.horizon == pytest.approx(1 / 3, abs=1e-15)
    assert tm.inverse(0.2) == pytest.approx(1 - np.sqrt(0.4), abs=1e-12)
    assert tm.inverse(0.0) == 0.0


def test_travel_map_scaling(grid, target):
    tm = build_travel_map(target, 0.5, 4, grid)
    assert tm.horizon == pytest.approx((1 / 3) / 2.0, abs=1e-15)


@pytest.mark.parametrize("maker", [make_linear_target, make_quadratic_target])
def test_travel_map_round_trip(maker):
    g = SpatialGrid.uniform(2.0, 300)
    tm = build_travel_map(maker(1.5, 2.0), 0.7, 3, g)
    assert np.max(np.abs(tm.inverse(tm.forward(g.nodes)) - g.nodes)) <= 1e-10 * g.L


def test_travel_map_rejects_bad_gain(grid, target):
    with pytest.raises(InvalidParameterError):
        build_travel_map(target, 0.0, 1, grid)
    with pytest.raises(InvalidParameterError):
        build_travel_map(target, 1.0, 0, grid)


@pytest.mark.parametrize("lam, p0", [(1.0, 2 / 3), (2.0, 0.5)])
def test_steady_state_linear(grid, lam, p0):
    plan = static_repair_rate(make_linear_target(1.0, 1.0))
    ss = steady_state(plan, lam, grid)
    assert ss.p0 == pytest.approx(p0, abs=1e-15)
    assert ss.p1 == pytest.approx(lam * p0 * (1 - grid.nodes), abs=1e-15)
    assert total_mass(ss, grid) == pytest.approx(1.0, abs=1e-15)


def test_open_loop_steady_state_is_fixed(grid, target):
    plan = static_repair_rate(target)
    ss = steady_state(plan, 1.0, grid)
    traj = open_loop_solve(ss, plan, 1.0, 2.0, grid=grid, reference=ss)
    assert np.max(traj.dist) <= 1e-8 * 2.0


def test_open_loop_survival_ratio_branch(target):
    g = SpatialGrid.uniform(1.0, 10)
    plan = static_repair_rate(target)
    traj = open_loop_solve(SystemState(0.0, np.ones(11)), plan, 1.0, 0.3, grid=g)
    assert traj.final.t == pytest.approx(0.3)
    assert traj.final.p1[8] == pytest.approx(0.4, abs=1e-14)


def test_open_loop_endpoint_and_mass(target):
    g = SpatialGrid.uniform(1.0, 512)
    plan = static_repair_rate(target)
    traj = open_loop_solve(point_mass(g), plan, 1.0, 3.0, grid=g)
    assert all(s.p1[-1] == 0.0 for s in traj.states)
    assert np.all(np.abs(traj.mass - 1) <= 1e-6 * (1 + traj.times))
    assert np.min(traj.min_p1) >= -1e-12


def test_open_loop_rejects_large_step(grid, target):
    with pytest.raises(StepSizeError):
        open_loop_solve(point_mass(grid), static_repair_rate(target), 1.0, 1.0, dt=0.02, grid=grid)


def test_open_loop_rejects_bad_initial_mass(grid, target):
    with pytest.raises(InvalidParameterError):
        open_loop_solve(SystemState(0.5, np.zeros(129)), static_repair_rate(target), 1.0, 1.0, grid=grid)


def test_open_loop_step_must_divide_horizon(grid, target):
    with pytest.raises(InvalidParameterError):
        open_loop_solve(point_mass(grid), static_repair_rate(target), 1.0, 1.0, dt=0.003, grid=grid)


def test_closed_loop_target_is_fixed(grid, target):
    traj = closed_loop_stage_solve(target.state(grid), target, 1.0, 1, 1.0, 0.01, grid)
    assert np.max(traj.dist) <= 1e-12


def test_closed_loop_delay_branch_consistency(grid, target):
    # p0 = p0* over the whole window: the fed branch reproduces p1* exactly
    traj = closed_loop_stage_solve(target.state(grid), target, 2.0, 3, 0.5, 0.005, grid)
    fed = traj.final
    assert fed.p0 == pytest.approx(target.p0_star, abs=1e-14)
    assert fed.p1 == pytest.approx(target.samples(grid), abs=1e-14)


def test_closed_loop_mass_and_endpoint(target):
    g = SpatialGrid.uniform(1.0, 256)
    traj = quiet(closed_loop_stage_solve, point_mass(g), target, 1.0, 1, 1.0, 0.005, g)
    assert np.all(np.abs(traj.mass - 1) <= 1e-6 * (1 + traj.times))
    assert all(s.p1[-1] == 0.0 for s in traj.states)
    assert np.min(traj.min_p1) >= -1e-12


def test_closed_loop_branch_continuity_for_compatible_data(target):
    g = SpatialGrid.uniform(1.0, 128)
    init = compatible_state((1 - g.nodes) ** 2, 1.0, g)
    traj = closed_loop_stage_solve(init, target, 1.0, 1, 0.3, 0.3 / 128, g)
    seams = [s.jump for s in traj.states if s.jump is not None]
    assert seams and max(abs(left - right) for _, left, right in seams) <= 1e-8


def test_closed_loop_warns_on_vanishing_data(grid, target):
    with pytest.warns(VanishingDataWarning):
        closed_loop_stage_solve(point_mass(grid), target, 1.0, 1, 0.2, 0.01, grid)


def test_closed_loop_rejects_unresolved_delay(grid, target):
    with pytest.raises(StepSizeError):
        closed_loop_stage_solve(target.state(grid), target, 1.0, 1, 1.0, 0.1, grid)


def test_closed_loop_stage_marks(grid, target):
    init = target.state(grid).replace(t=1.5)
    traj = closed_loop_stage_solve(init, target, 1.0, 2, 0.25, 0.025, grid)
    assert traj.stage_marks == {2: (1.5, 1.75)}
    assert traj.times[-1] == pytest.approx(1.75)


def test_staged_from_target_stops_after_first_stage(grid, target):
    run = staged_control_solve(target.state(grid), target, 2.0, 1.0, grid=grid)
    assert run.stages_run == 1 and run.stop_reason == "converged"
    assert run.final_error <= 1e-12


def test_staged_errors_nonincreasing_after_first_stage(target):
    g = SpatialGrid.uniform(1.0, 128)
    run = quiet(staged_control_solve, point_mass(g), target, 2.0, 1.0, 12, 0.0, 64, g)
    e = np.array([run.stage_errors[i] for i in range(1, run.stages_run + 1)])
    assert run.stages_run == 12 and run.stop_reason == "i_max"
    assert np.all(np.diff(e[1:]) <= 1e-12)
    sched = build_schedule(2.0, 12)
    for i in range(1, 13):
        t_end = run.trajectory.states[run.trajectory.stage_end_index(i)].t
        assert t_end == sched.end(i)


def test_staged_schedule_exhausted(grid, target):
    run = quiet(staged_control_solve, point_mass(grid), target, 2.0, 1.0, 40, 0.0, 64, grid, dt_floor=1e-3)
    assert run.stop_reason == "schedule-exhausted"
    assert 1 <= run.stages_run < 40
    assert run.final_error == pytest.approx(x_norm_distance(run.trajectory.final, target.state(grid), grid))
