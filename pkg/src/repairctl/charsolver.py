"""Exact solvers built on the characteristic form of the model.

Open loop (static hazard ``mu``, survival ``S``)::

    p1(x, t) = lam p0(t - x) S(x)                 x < t
    p1(x, t) = p1(x - t, 0) S(x) / S(x - t)       x >= t

Closed loop, stage weight ``a = alpha * i``: with ``q = p1 / p1*`` and the
travel coordinate ``y = F(x) = (1/a) int_0^x p1*``, ``q`` is carried at
unit speed in ``y``::

    p1(x, t) = p1*(x) q0(F^-1(F(x) - t))          t <= F(x)
    p1(x, t) = p1*(x) kappa p0(t - F(x))          t >  F(x)

where ``kappa = lam / p1*(0)``.  In both cases ``p0`` is the only
quantity that is time-stepped; densities at any time are read off the
stage's initial data and the ``p0`` history.

The ``p0`` update is the trapezoid rule on ``dp0/dt = -out + return`` in
which the return of mass that was already under repair at the start of
the run is integrated exactly over each step (mass of the initial
density crossing the exit characteristic), so a hazard that is not
integrable at ``L`` never has to be evaluated there.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._numerics import PiecewiseLinear, trapezoid
from .control import RepairRatePlan, StageSchedule, build_schedule
from .domain import SpatialGrid, SystemState, TargetProfile, total_mass, x_norm_distance
from .errors import InvalidParameterError, StepSizeError, VanishingDataWarning
from .trajectory import Trajectory, concatenate

__all__ = [
    "TravelMap",
    "Trajectory",
    "build_travel_map",
    "steady_state",
    "open_loop_solve",
    "closed_loop_stage_solve",
    "staged_control_solve",
    "StagedRun",
]

_MASS_CHECK = 1e-8


@dataclass(frozen=True)
class TravelMap:
    """Travel time ``F(x) = (1/(alpha i)) int_0^x p1*(s) ds`` and its inverse.

    ``p1*`` enters through its piecewise-linear interpolant on the grid,
    so ``F`` is the cumulative trapezoid rule at the nodes and a
    piecewise quadratic in between.
    """

    alpha_i: float
    profile: PiecewiseLinear

    @property
    def horizon(self) -> float:
        return self.profile.total / self.alpha_i

    def forward(self, x):
        return self.profile.antiderivative(x) / self.alpha_i

    def inverse(self, tau):
        return self.profile.invert_antiderivative(np.asarray(tau, dtype=float) * self.alpha_i)


def build_travel_map(target: TargetProfile, alpha: float, i: int, grid: SpatialGrid) -> TravelMap:
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    if i < 1:
        raise InvalidParameterError(f"stage index must be >= 1, got {i}")
    return TravelMap(alpha * i, PiecewiseLinear(grid.nodes, target.samples(grid)))


def steady_state(plan: RepairRatePlan, lam: float, grid: SpatialGrid) -> SystemState:
    """Stationary distribution ``(p0, lam p0 S(x))`` normalised to unit mass."""
    S = np.asarray(plan.survival(grid.nodes), dtype=float)
    p0 = 1.0 / (1.0 + lam * grid.integrate(S))
    return SystemState(p0, lam * p0 * S)


def _check_initial(initial: SystemState, grid: SpatialGrid):
    if initial.p1.shape != grid.nodes.shape:
        raise InvalidParameterError("initial density is not sampled on the grid")
    m = total_mass(initial, grid)
    if abs(m - 1.0) > _MASS_CHECK:
        raise InvalidParameterError(f"initial mass must be 1, got {m!r}")
    if initial.p0 < 0 or np.any(initial.p1 < 0):
        raise InvalidParameterError("initial data must be nonnegative")


def _step_count(t_end: float, dt: float) -> int:
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise InvalidParameterError(f"dt={dt} does not divide t_end={t_end}")
    return n


class _History:
    """Uniformly sampled ``p0`` with piecewise-linear interpolation and an
    exact running integral."""

    def __init__(self, dt: float, n: int, p0: float):
        self.dt = dt
        self.values = np.empty(n + 1)
        self.cum = np.empty(n + 1)
        self.values[0] = p0
        self.cum[0] = 0.0
        self.size = 1

    def push(self, p0: float):
        k = self.size
        self.values[k] = p0
        self.cum[k] = self.cum[k - 1] + 0.5 * self.dt * (self.values[k - 1] + p0)
        self.size += 1

    def _split(self, u):
        u = np.asarray(u, dtype=float)
        pos = np.clip(u / self.dt, 0.0, self.size - 1)
        k = np.minimum(np.floor(pos).astype(int), self.size - 2) if self.size > 1 else np.zeros_like(pos, dtype=int)
        return k, pos - k

    def __call__(self, u):
        if self.size == 1:
            return np.full(np.shape(u), self.values[0])
        k, th = self._split(u)
        v = self.values
        return v[k] + th * (v[k + 1] - v[k])

    def integral(self, u) -> float:
        """``int_0^u p0`` for ``0 <= u <= current time``."""
        if self.size == 1:
            return float(self.values[0] * u)
        k, th = self._split(u)
        v = self.values
        s = th * self.dt
        return float(self.cum[k] + v[k] * s + 0.5 * (v[k + 1] - v[k]) / self.dt * s * s)


# ---------------------------------------------------------------- open loop


def open_loop_solve(
    initial: SystemState,
    plan: RepairRatePlan,
    lam: float,
    t_end: float,
    dt: float | None = None,
    grid: SpatialGrid | None = None,
    reference: SystemState | None = None,
) -> Trajectory:
    """Open-loop evolution under a static hazard.

    ``dt`` defaults to the (uniform) cell width, which puts every
    characteristic on a node.  A step longer than the smallest cell is
    rejected.  Distances in the returned trajectory are measured against
    ``reference`` (default: the plan's steady state).
    """
    if plan.kind != "static":
        raise InvalidParameterError("open-loop solver needs a static plan")
    if grid is None:
        raise InvalidParameterError("grid is required")
    _check_initial(initial, grid)
    x = grid.nodes
    hmin = float(np.min(np.diff(x)))
    if dt is None:
        dt = grid.h
    if dt > hmin * (1.0 + 1e-12):
        raise StepSizeError(
            f"dt={dt} exceeds the smallest cell {hmin}; characteristics would skip cells"
        )
    n_steps = _step_count(t_end, dt)
    L = grid.L
    S = np.asarray(plan.survival(x), dtype=float)
    f = np.asarray(plan.density(x), dtype=float)
    init = PiecewiseLinear(x, initial.p1)
    hist = _History(dt, n_steps, initial.p0)
    if reference is None:
        reference = steady_state(plan, lam, grid)

    def survival(w):
        w = np.asarray(w, dtype=float)
        return np.where(w < L, np.asarray(plan.survival(np.minimum(w, L)), dtype=float), 0.0)

    def initial_mass_left(t):
        # int p1(z,0) S(z+t)/S(z) dz over z in [0, L - t]
        if t <= 0.0:
            return init.total
        if t >= L:
            return 0.0
        z = np.append(x[x < L - t], L - t)
        Sz = np.asarray(plan.survival(z), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(Sz > 0, survival(z + t) / np.where(Sz > 0, Sz, 1.0), 0.0)
        return trapezoid(init(z) * ratio, z)

    def delay_return(t):
        # lam int_0^{min(t,L)} p0(t - x) f(x) dx, split into the implicit
        # x = 0 weight and the part known from history
        if t <= 0.0:
            return 0.0, 0.0
        top = min(t, L)
        xs = x[x < top]
        xs = np.append(xs, top)
        vals = lam * hist(t - xs) * np.asarray(plan.density(xs), dtype=float)
        w0 = 0.5 * (xs[1] - xs[0])
        known = trapezoid(vals, xs) - w0 * vals[0]
        return w0 * lam * float(f[0]), known

    def state_at(t):
        p1 = np.empty_like(x)
        old = x >= t
        new = ~old
        p1[new] = lam * hist(t - x[new]) * S[new]
        z = x[old] - t
        Sz = np.asarray(plan.survival(z), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(Sz > 0, S[old] / np.where(Sz > 0, Sz, 1.0), 0.0)
        p1[old] = init(z) * ratio
        jump = None
        if 0.0 < t < L:
            st = float(plan.survival(np.array(t)))
            left = lam * float(hist(0.0)) * st
            right = float(initial.p1[0]) * st
            jump = (t, left, right)
            on_node = np.isclose(x, t, rtol=0.0, atol=1e-12 * L)
            p1[on_node] = 0.5 * (left + right)
        return SystemState(hist.values[hist.size - 1], p1, initial.t + t, jump)

    states = [initial.replace(jump=None)]
    prev_left = initial_mass_left(0.0)
    r_prev = 0.0
    for n in range(n_steps):
        t_next = (n + 1) * dt
        left = initial_mass_left(t_next)
        completed = prev_left - left
        p_n = hist.values[hist.size - 1]
        # every knot but x = 0 reads p0 at or before t_n because dt <= cell width
        c_new, known_new = delay_return(t_next)
        rhs = p_n + completed + 0.5 * dt * (r_prev - lam * p_n + known_new)
        p_new = rhs / (1.0 + 0.5 * dt * (lam - c_new))
        hist.push(p_new)
        r_prev = c_new * p_new + known_new
        prev_left = left
        states.append(state_at(t_next))
    info = {"dt": dt, "solver": "open-loop-characteristics"}
    return Trajectory.from_states(states, grid, reference, info=info)


# -------------------------------------------------------------- closed loop


def closed_loop_stage_solve(
    initial: SystemState,
    target: TargetProfile,
    alpha: float,
    i: int,
    duration: float,
    dt: float,
    grid: SpatialGrid,
    reference: SystemState | None = None,
    stage_label: int | None = None,
) -> Trajectory:
    """One stage of the closed loop with weight ``alpha * i``.

    Time runs from ``initial.t`` to ``initial.t + duration``.  ``dt`` must
    resolve the transport delay: ``dt <= horizon / 4``.
    """
    _check_initial(initial, grid)
    tm = build_travel_map(target, alpha, i, grid)
    H = tm.horizon
    if dt > H / 4.0 * (1.0 + 1e-12):
        raise StepSizeError(f"dt={dt} does not resolve the delay horizon {H} (need dt <= H/4)")
    n_steps = _step_count(duration, dt)
    a = alpha * i
    x = grid.nodes
    P = target.samples(grid)
    kappa = target.lam / float(P[0])
    y = tm.forward(x)
    y[-1] = H
    V = PiecewiseLinear(x, initial.p1)
    Pl = tm.profile
    if initial.p1[-1] > 0.0:
        warnings.warn(
            "initial density is positive at x=L where the target vanishes; "
            "g*p1 is unbounded there and the exit flux is integrated as mass only",
            stacklevel=2,
        )
    inner = initial.p1[1:-1] == 0.0
    if np.any(inner[1:] & inner[:-1]):
        warnings.warn(
            "initial density vanishes on an interval; g*p1 there is evaluated as "
            "p1(psi, 0) / p1*(psi), whose accuracy for such data is not established",
            VanishingDataWarning,
            stacklevel=2,
        )
    last_ratio = float(initial.p1[-2]) / float(P[-2]) if initial.p1[-1] == 0.0 else np.inf
    q_at_0 = float(initial.p1[0]) / float(P[0])
    hist = _History(dt, n_steps, initial.p0)
    if reference is None:
        reference = target.state(grid)

    def q0(xq):
        num = V(xq)
        den = Pl(xq)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), last_ratio)

    def state_at(s):
        p1 = np.zeros_like(x)
        live = P > 0
        carried = live & (y >= s)
        fed = live & (y < s)
        p1[carried] = P[carried] * q0(tm.inverse(y[carried] - s))
        p1[fed] = P[fed] * kappa * hist(s - y[fed])
        jump = None
        if 0.0 < s < H:
            xs = float(tm.inverse(s))
            ps = float(Pl(xs))
            left = ps * kappa * float(hist(0.0))
            right = ps * q_at_0
            jump = (xs, left, right)
            on_node = np.isclose(x, xs, rtol=0.0, atol=1e-12 * grid.L)
            p1[on_node] = 0.5 * (left + right)
        return SystemState(hist.values[hist.size - 1], p1, initial.t + s, jump)

    half = 0.5 * a * kappa * dt
    states = [initial.replace(jump=None)]
    for n in range(n_steps):
        s0, s1 = n * dt, (n + 1) * dt
        ret = 0.0
        lo, hi = s0, min(s1, H)
        if lo < hi:
            ret += float(V.integral(tm.inverse(H - hi), tm.inverse(H - lo)))
        lo, hi = max(s0, H), s1
        if lo < hi:
            ret += a * kappa * (hist.integral(hi - H) - hist.integral(lo - H))
        p_n = hist.values[hist.size - 1]
        p_new = (p_n * (1.0 - half) + ret) / (1.0 + half)
        hist.push(p_new)
        states.append(state_at(s1))
    stage = i if stage_label is None else stage_label
    info = {"dt": dt, "horizon": H, "alpha": alpha, "stage": i, "solver": "closed-loop-characteristics"}
    return Trajectory.from_states(
        states,
        grid,
        reference,
        stages=[stage] * len(states),
        stage_marks={stage: (initial.t, initial.t + duration)},
        info=info,
    )


def stage_time_step(schedule: StageSchedule, i: int, horizon: float, kappa_a: float, steps_per_stage: int = 64):
    """Default step for stage ``i``: ``length/steps``, capped by ``horizon/8``
    and by ``1/(alpha i kappa)`` (keeps the ``p0`` update positive)."""
    T = schedule.length(i)
    dt = min(T / steps_per_stage, horizon / 8.0, 1.0 / kappa_a)
    n = max(steps_per_stage, math.ceil(T / dt - 1e-9))
    return T / n, n


@dataclass(frozen=True)
class StagedRun:
    trajectory: Trajectory
    schedule: StageSchedule
    alpha: float
    stage_errors: dict
    stages_run: int
    final_error: float
    stop_reason: str


def staged_control_solve(
    initial: SystemState,
    target: TargetProfile,
    t_f: float,
    alpha: float,
    i_max: int = 40,
    tol_final: float = 1e-3,
    steps_per_stage: int = 64,
    grid: SpatialGrid | None = None,
    schedule: StageSchedule | None = None,
    dt_floor: float = 1e-12,
) -> StagedRun:
    """Chain closed-loop stages ``i = 1, 2, ...`` over ``[t_{i-1}, t_i)``.

    Stops when the X-norm error at a stage end falls to ``tol_final``, at
    ``i_max``, or when a stage can no longer be resolved (step below
    ``dt_floor``); the reason is reported in ``stop_reason``.
    """
    if grid is None:
        raise InvalidParameterError("grid is required")
    if schedule is None:
        schedule = build_schedule(t_f, i_max)
    ref = target.state(grid)
    P0 = float(target.p1_star(np.array(0.0)))
    kappa = target.lam / P0
    norm = PiecewiseLinear(grid.nodes, target.samples(grid)).total

    state = initial.replace(t=0.0, jump=None)
    parts, marks, errors = [], {}, {}
    err = x_norm_distance(state, ref, grid)
    reason = "i_max"
    for i in range(1, min(i_max, schedule.i_max) + 1):
        a = alpha * schedule.gain(i)
        horizon = norm / a
        dt, n = stage_time_step(schedule, i, horizon, a * kappa, steps_per_stage)
        if dt < dt_floor:
            reason = "schedule-exhausted"
            break
        # the solver's stage weight is alpha*i; pass the gain through alpha
        part = closed_loop_stage_solve(
            state, target, a / i, i, schedule.length(i), dt, grid, reference=ref
        )
        part_states = list(part.states)
        # pin the stage end exactly onto the schedule endpoint
        end = part_states[-1].replace(t=schedule.end(i))
        part_states[-1] = end
        part = Trajectory.from_states(
            part_states, grid, ref, [i] * len(part_states), {i: (schedule.start(i), schedule.end(i))}
        )
        parts.append(part)
        marks[i] = (schedule.start(i), schedule.end(i))
        state = end
        err = x_norm_distance(state, ref, grid)
        errors[i] = err
        if err <= tol_final:
            reason = "converged"
            break
    if not parts:
        traj = Trajectory.from_states([state], grid, ref, [0], {})
    else:
        traj = concatenate(parts, grid, ref, marks, info={"alpha": alpha, "t_f": t_f})
    return StagedRun(traj, schedule, alpha, errors, len(parts), err, reason)
