import json
import math

import numpy as np
import pytest

from repairctl import (
    InvalidParameterError,
    InvalidTrajectoryError,
    SingularTargetError,
    SpatialGrid,
    Trajectory,
    build_schedule,
    evaluate_feedback_mu,
    make_linear_target,
    make_quadratic_target,
    make_tabulated_target,
    mu_boundedness_scan,
    select_alpha,
    staged_plan,
    static_repair_rate,
)
from repairctl.control import harmonic


def test_schedule_unit_c0():
    s = build_schedule(math.pi**2 / 6, 3)
    assert s.c0 == pytest.approx(1.0, abs=1e-15)
    assert s.endpoints == pytest.approx([1.0, 1.25, 1 + 1 / 4 + 1 / 9], abs=1e-14)


def test_schedule_c0_for_unit_horizon():
    assert build_schedule(1.0).c0 == pytest.approx(0.60793, abs=1e-5)


def test_schedule_stage_lengths_and_tail():
    t_f = 2.0
    s = build_schedule(t_f, 40)
    lengths = np.diff(np.concatenate(([0.0], s.endpoints)))
    k = np.arange(1, 41)
    assert np.allclose(lengths, s.c0 / k**2, rtol=1e-12, atol=0)
    assert s.length(1) == s.c0 == s.end(1)
    tail = s.c0 * sum(1 / j**2 for j in range(41, 200_000))
    assert s.endpoints[-1] < t_f < s.endpoints[-1] + tail * 1.001


def test_stage_of():
    s = build_schedule(math.pi**2 / 6, 5)
    assert s.stage_of(0.0) == 1
    assert s.stage_of(0.999) == 1
    assert s.stage_of(1.0) == 2
    assert s.stage_of(1.3) == 3
    with pytest.raises(InvalidParameterError):
        s.stage_of(10.0)


@pytest.mark.parametrize("t_f, i_max", [(0.0, 4), (-1.0, 4), (1.0, 0)])
def test_schedule_rejects(t_f, i_max):
    with pytest.raises(InvalidParameterError):
        build_schedule(t_f, i_max)


def test_harmonic():
    assert harmonic(1) == 1.0
    assert harmonic(2) == 1.5
    assert harmonic(3) == pytest.approx(1.8333333333333333, abs=1e-15)


def _profile_with_p0(value):
    # tabulated stand-in whose p1*(0) equals `value`
    x = np.linspace(0, 1, 5)
    return make_tabulated_target(1.0, x, value * (1 - x))


@pytest.mark.parametrize(
    "p_at_0, c0, eps0, expected",
    [(2 / 3, 1.0, 0.5, 2.0), (2 / 3, 1.0, 2.0, 1.0), (3.0, 1.0, 10.0, 3.0)],
)
def test_select_alpha(p_at_0, c0, eps0, expected):
    assert select_alpha(_profile_with_p0(p_at_0), c0, eps0) == pytest.approx(expected, abs=1e-15)


def test_select_alpha_rejects_nonpositive_rate():
    with pytest.raises(InvalidParameterError):
        select_alpha(make_linear_target(1, 1), 1.0, 0.0)


def test_static_rate_linear():
    plan = static_repair_rate(make_linear_target(1.0, 1.0))
    assert plan.mu(np.array([0.0, 0.5])) == pytest.approx([1.0, 2.0], abs=1e-14)
    x = np.linspace(0, 1, 11)
    assert plan.survival(x) == pytest.approx(1 - x, abs=1e-15)
    assert plan.survival(np.array(0.0)) == 1.0 and plan.survival(np.array(1.0)) == 0.0
    assert plan.density(x) == pytest.approx(np.ones_like(x), abs=1e-15)
    assert np.isinf(plan.mu(np.array(1.0)))


def test_static_rate_quadratic():
    plan = static_repair_rate(make_quadratic_target(1.0, 1.0))
    x = np.array([0.0, 0.25, 0.9])
    assert plan.mu(x) == pytest.approx(2 / (1 - x), rel=1e-13)


def test_static_rate_survival_properties():
    plan = static_repair_rate(make_quadratic_target(2.0, 3.0))
    x = np.linspace(0, 3, 50)
    S = plan.survival(x)
    assert S[0] == 1.0 and S[-1] == 0.0 and np.all(np.diff(S) < 0)
    assert np.all(plan.mu(x[:-1]) >= 0)


def test_static_rate_singular_target():
    x = np.linspace(0, 1, 5)
    t = make_tabulated_target(1.0, x, np.array([0.5, 0.3, 0.0, 0.1, 0.0]))
    with pytest.raises(SingularTargetError):
        static_repair_rate(t)


def test_staged_plan_requires_alpha_above_boundary_value():
    t = make_linear_target(1.0, 1.0)
    with pytest.raises(InvalidParameterError):
        staged_plan(t, 0.5, build_schedule(2.0))


def test_plan_serializes():
    t = make_linear_target(1.0, 1.0)
    plan = staged_plan(t, 1.0, build_schedule(2.0, 3))
    d = json.loads(json.dumps(plan.to_dict()))
    assert set(d) == {"kind", "lambda", "L", "alpha", "c0", "endpoints", "target"}
    assert d["target"]["form"] == "linear-decay" and len(d["endpoints"]) == 3


def _plan(alpha=1.0, t_f=2.0):
    t = make_linear_target(1.0, 1.0)
    return t, staged_plan(t, alpha, build_schedule(t_f))


@pytest.mark.parametrize("t_stage", [0.1, 1.3, 1.9])
def test_feedback_mu_at_target_is_static(t_stage):
    t, plan = _plan()
    g = SpatialGrid.uniform(1.0, 64)
    fb = evaluate_feedback_mu(t.state(g), g, plan, t_stage, dp1=t.dp1_star(g.nodes))
    x = fb.x
    assert np.allclose(fb.mu, 1 / (1 - x), rtol=1e-12)
    assert fb.undefined == ()


def test_feedback_mu_scale_invariant():
    t, plan = _plan()
    g = SpatialGrid.uniform(1.0, 64)
    base = t.state(g).replace(p1=t.samples(g) * (1 + 0.3 * g.nodes))
    mu1 = evaluate_feedback_mu(base, g, plan, 0.2).mu
    mu2 = evaluate_feedback_mu(base.replace(p1=2 * base.p1), g, plan, 0.2).mu
    assert np.allclose(mu1, mu2, rtol=1e-13)


def test_feedback_mu_flags_zero_density():
    t, plan = _plan()
    g = SpatialGrid.uniform(1.0, 16)
    p1 = t.samples(g).copy()
    p1[5] = 0.0
    fb = evaluate_feedback_mu(t.state(g).replace(p1=p1), g, plan, 0.1)
    assert fb.undefined == (5,)
    assert 5 not in fb.nodes


def _constant_target_trajectory(g, t, sched):
    states, stages, marks = [], [], {}
    for i in range(1, 4):
        t0, t1 = sched.start(i), sched.end(i)
        for tt in np.linspace(t0, t1, 5)[(0 if i == 1 else 1):]:
            states.append(t.state(g, tt))
            stages.append(i)
        marks[i] = (t0, t1)
    return Trajectory.from_states(states, g, t.state(g), stages, marks)


def test_scan_at_target_is_zero():
    t, plan = _plan()
    g = SpatialGrid.uniform(1.0, 32)
    traj = _constant_target_trajectory(g, t, plan.schedule)
    scan = mu_boundedness_scan(traj, plan)
    assert np.all(scan.sups == 0.0)
    assert scan.hypothesis_holds


def test_scan_nested_windows():
    t, plan = _plan()
    g = SpatialGrid.uniform(1.0, 32)
    traj = _constant_target_trajectory(g, t, plan.schedule)
    bumped = [s.replace(p1=s.p1 * (1 + 0.1 * np.sin(7 * g.nodes + k))) for k, s in enumerate(traj.states)]
    traj = Trajectory.from_states(bumped, g, traj.reference, traj.stages, traj.stage_marks)
    lo = mu_boundedness_scan(traj, plan, 0.5).sups
    hi = mu_boundedness_scan(traj, plan, 0.9).sups
    assert np.all(hi >= lo)


def test_scan_requires_stage_marks():
    t, plan = _plan()
    g = SpatialGrid.uniform(1.0, 16)
    traj = Trajectory.from_states([t.state(g)], g)
    with pytest.raises(InvalidTrajectoryError):
        mu_boundedness_scan(traj, plan)


def test_scan_hypothesis_flag():
    t, plan = _plan(t_f=0.5)
    g = SpatialGrid.uniform(1.0, 16)
    traj = _constant_target_trajectory(g, t, plan.schedule)
    assert not mu_boundedness_scan(traj, plan).hypothesis_holds
