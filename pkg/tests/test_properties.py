import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from repairctl import (
    SpatialGrid,
    SystemState,
    Trajectory,
    audit_invariants,
    build_schedule,
    build_travel_map,
    evaluate_feedback_mu,
    make_linear_target,
    make_quadratic_target,
    staged_plan,
    total_mass,
    x_norm_distance,
)

GRID = SpatialGrid.uniform(1.0, 16)
densities = arrays(np.float64, 17, elements=st.floats(0.0, 5.0))
probs = st.floats(0.0, 1.0)
states = st.builds(SystemState, probs, densities)


@given(states, states, states)
def test_x_norm_triangle(a, b, c):
    ab = x_norm_distance(a, b, GRID)
    bc = x_norm_distance(b, c, GRID)
    ac = x_norm_distance(a, c, GRID)
    assert ac <= ab + bc + 1e-12


@given(states, states)
def test_x_norm_symmetric_and_definite(a, b):
    assert x_norm_distance(a, b, GRID) == x_norm_distance(b, a, GRID)
    assert x_norm_distance(a, a, GRID) == 0.0
    if x_norm_distance(a, b, GRID) == 0.0:
        assert a.p0 == b.p0 and np.array_equal(a.p1, b.p1)


@given(states, st.floats(0.1, 10.0))
def test_total_mass_homogeneous(s, c):
    scaled = SystemState(c * s.p0, c * s.p1)
    assert np.isclose(total_mass(scaled, GRID), c * total_mass(s, GRID), rtol=1e-12, atol=1e-12)


@given(
    st.floats(0.2, 5.0),
    st.floats(0.2, 3.0),
    st.floats(0.1, 4.0),
    st.integers(1, 40),
    st.sampled_from([make_linear_target, make_quadratic_target]),
)
@settings(max_examples=40, deadline=None)
def test_travel_map_round_trip(lam, L, alpha, i, maker):
    g = SpatialGrid.uniform(L, 64)
    target = maker(lam, L)
    tm = build_travel_map(target, alpha, i, g)
    assert np.max(np.abs(tm.inverse(tm.forward(g.nodes)) - g.nodes)) <= 1e-10 * L
    # the map integrates the sampled target by the trapezoid rule
    assert np.isclose(tm.horizon, g.integrate(target.samples(g)) / (alpha * i), rtol=1e-12)


@given(st.floats(0.01, 50.0), arrays(np.float64, 33, elements=st.floats(0.5, 2.0)), st.floats(0.0, 1.9))
@settings(max_examples=40, deadline=None)
def test_feedback_mu_scale_invariant(c, bump, t):
    target = make_linear_target(1.0, 1.0)
    g = SpatialGrid.uniform(1.0, 32)
    plan = staged_plan(target, 1.0, build_schedule(2.0))
    s = target.state(g).replace(p1=target.samples(g) * bump)
    mu1 = evaluate_feedback_mu(s, g, plan, t).mu
    mu2 = evaluate_feedback_mu(s.replace(p1=c * s.p1), g, plan, t).mu
    assert np.allclose(mu1, mu2, rtol=1e-9, atol=1e-9)


@given(st.floats(0.01, 100.0), st.integers(1, 60))
def test_schedule_partition(t_f, i_max):
    s = build_schedule(t_f, i_max)
    assert np.all(np.diff(s.endpoints) > 0)
    assert s.endpoints[-1] < t_f
    k = np.arange(1, i_max + 1)
    assert np.allclose(np.diff(np.concatenate(([0.0], s.endpoints))), s.c0 / k**2, rtol=1e-10)


@given(st.lists(states, min_size=3, max_size=8), st.randoms(use_true_random=False))
def test_audit_order_insensitive(records, rnd):
    # the earliest record is initial data; permute the payloads of the others
    first, rest = records[0], records[1:]
    shuffled = rest[:]
    rnd.shuffle(shuffled)

    def build(seq):
        return Trajectory.from_states([s.replace(t=float(k)) for k, s in enumerate([first] + seq)], GRID)

    a = audit_invariants(build(rest), GRID)
    b = audit_invariants(build(shuffled), GRID)
    assert (a.max_mass_drift, a.min_density, a.max_endpoint_density) == (
        b.max_mass_drift,
        b.min_density,
        b.max_endpoint_density,
    )
