"""Repair-rate synthesis: static design and the staged bilinear feedback law.

The static design makes the target the steady state of the open-loop
model.  The staged law switches, on ``[t_{i-1}, t_i)``, to

    mu(x, t) = -p1_x / p1 + alpha * i * (g p1)_x / p1,   g = 1 / p1*

with stage endpoints ``t_i = c0 * sum_{k<=i} 1/k^2`` and
``c0 = 6 t_f / pi^2`` so that the stages exhaust ``[0, t_f)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .domain import SpatialGrid, SystemState, TargetProfile
from .errors import InvalidParameterError, InvalidTrajectoryError, SingularTargetError

if TYPE_CHECKING:
    from .diagnostics import DecayFit
    from .trajectory import Trajectory


def harmonic(i: int) -> float:
    return math.fsum(1.0 / k for k in range(1, i + 1))


@dataclass(frozen=True)
class StageSchedule:
    """Partition of ``[0, t_f)`` into stages of length ``c0 / i^2``.

    ``gain`` maps the stage index to the multiplier of ``alpha``; the
    default ``i`` is the only choice the package tests, others are a hook
    for experiments (the decay argument needs ``sum gain(k)/k^2 * ...``
    to diverge).
    """

    t_f: float
    c0: float
    endpoints: np.ndarray
    gain: Callable[[int], float] = field(default=float, compare=False)

    @property
    def i_max(self) -> int:
        return len(self.endpoints)

    def start(self, i: int) -> float:
        return 0.0 if i == 1 else float(self.endpoints[i - 2])

    def end(self, i: int) -> float:
        return float(self.endpoints[i - 1])

    def length(self, i: int) -> float:
        return self.c0 / i**2

    def stage_of(self, t: float) -> int:
        """Stage index ``i`` with ``t_{i-1} <= t < t_i``."""
        if t < 0:
            raise InvalidParameterError(f"time must be nonnegative, got {t}")
        i = int(np.searchsorted(self.endpoints, t, side="right")) + 1
        if i > self.i_max:
            raise InvalidParameterError(f"t={t} lies beyond the last scheduled stage")
        return i


def build_schedule(t_f: float, i_max: int = 40) -> StageSchedule:
    if not t_f > 0:
        raise InvalidParameterError(f"t_f must be positive, got {t_f}")
    if i_max < 1:
        raise InvalidParameterError(f"i_max must be >= 1, got {i_max}")
    c0 = 6.0 * t_f / math.pi**2
    k = np.arange(1, i_max + 1, dtype=float)
    endpoints = c0 * np.cumsum(1.0 / k**2)
    endpoints.setflags(write=False)
    return StageSchedule(t_f, c0, endpoints)


@dataclass(frozen=True)
class RepairRatePlan:
    """Either a static hazard ``mu(x)`` or a staged feedback plan.

    For static plans ``survival`` is ``exp(-int_0^x mu)`` and ``density`` is
    the repair-time density ``mu * survival``; both are given in closed form
    so that the non-integrable hazard at ``L`` is never integrated.
    """

    kind: str
    lam: float
    L: float
    target: TargetProfile | None = None
    mu: Callable | None = None
    survival: Callable | None = None
    density: Callable | None = None
    alpha: float | None = None
    schedule: StageSchedule | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "lambda": self.lam, "L": self.L}
        if self.kind == "staged-feedback":
            out.update(
                alpha=self.alpha,
                c0=self.schedule.c0,
                endpoints=[float(t) for t in self.schedule.endpoints],
            )
        if self.target is not None:
            out["target"] = self.target.to_dict()
        return out


def static_repair_rate(target: TargetProfile, grid: SpatialGrid | None = None) -> RepairRatePlan:
    """``mu = -(ln p1*)'`` so that the open-loop steady state is the target."""
    probe = [np.asarray(target.params["x"])] if target.form == "tabulated" else []
    if grid is not None:
        probe.append(grid.nodes)
    for x in probe:
        inner = x[1:-1]
        if np.any(np.asarray(target.p1_star(inner)) <= 0.0):
            bad = inner[np.asarray(target.p1_star(inner)) <= 0.0][0]
            raise SingularTargetError(f"target density vanishes at interior point x={bad}")
    p_at_0 = float(target.p1_star(np.array(0.0)))
    if p_at_0 <= 0:
        raise SingularTargetError("target density must be positive at x=0")

    def mu(x):
        x = np.asarray(x, dtype=float)
        p = np.asarray(target.p1_star(x), dtype=float)
        dp = np.asarray(target.dp1_star(x), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(p > 0, -dp / np.where(p > 0, p, 1.0), np.inf)

    def survival(x):
        return np.asarray(target.p1_star(np.asarray(x, dtype=float)), dtype=float) / p_at_0

    def density(x):
        return -np.asarray(target.dp1_star(np.asarray(x, dtype=float)), dtype=float) / p_at_0

    return RepairRatePlan("static", target.lam, target.L, target, mu, survival, density)


def select_alpha(target: TargetProfile, c0: float, eps0: float) -> float:
    """Smallest gain allowed by the boundedness argument:
    ``max(p1*(0), 1/c0, 1/(c0 eps0))``."""
    if not eps0 > 0:
        raise InvalidParameterError(f"decay rate eps0 must be positive, got {eps0}")
    if not c0 > 0:
        raise InvalidParameterError(f"c0 must be positive, got {c0}")
    p_at_0 = float(target.p1_star(np.array(0.0)))
    return max(p_at_0, 1.0 / c0, 1.0 / (c0 * eps0))


def staged_plan(target: TargetProfile, alpha: float, schedule: StageSchedule) -> RepairRatePlan:
    p_at_0 = float(target.p1_star(np.array(0.0)))
    if alpha < p_at_0:
        raise InvalidParameterError(f"alpha={alpha} must be >= p1*(0)={p_at_0}")
    return RepairRatePlan(
        "staged-feedback", target.lam, target.L, target, alpha=alpha, schedule=schedule
    )


@dataclass(frozen=True)
class FeedbackHazard:
    """Feedback hazard at interior nodes; ``undefined`` lists node indices
    where ``p1`` vanished and the hazard was omitted."""

    nodes: np.ndarray
    x: np.ndarray
    mu: np.ndarray
    undefined: tuple[int, ...]


def evaluate_feedback_mu(
    state: SystemState,
    grid: SpatialGrid,
    plan: RepairRatePlan,
    t: float,
    dp1: np.ndarray | None = None,
) -> FeedbackHazard:
    """Evaluate the staged feedback hazard at the interior nodes.

    ``dp1`` defaults to central differences (one-sided at the ends).  The
    correction term is expanded as ``(g' p1 + g p1_x) / p1`` with
    ``g' = -p1*_x / p1*^2``.
    """
    if plan.kind != "staged-feedback":
        raise InvalidParameterError("feedback hazard needs a staged plan")
    i = plan.schedule.stage_of(t)
    weight = plan.alpha * plan.schedule.gain(i)
    x = grid.nodes
    p1 = state.p1
    if dp1 is None:
        dp1 = np.gradient(p1, x)
    ps = plan.target.samples(grid)
    dps = np.asarray(plan.target.dp1_star(x), dtype=float)

    idx = np.arange(1, grid.N)
    ok = p1[idx] != 0.0
    good = idx[ok]
    g = 1.0 / ps[good]
    dg = -dps[good] / ps[good] ** 2
    p, dp = p1[good], dp1[good]
    mu = -dp / p + weight * (dg * p + g * dp) / p
    return FeedbackHazard(good, x[good], mu, tuple(int(k) for k in idx[~ok]))


@dataclass(frozen=True)
class StageScanRow:
    stage: int
    t_start: float
    t_end: float
    sup: float
    bound_measured: float
    bound_fitted: float
    delay_regime: bool


@dataclass(frozen=True)
class BoundednessScan:
    rows: tuple[StageScanRow, ...]
    l_frac: float
    hypothesis_holds: bool

    @property
    def sups(self) -> np.ndarray:
        return np.array([r.sup for r in self.rows])


def mu_boundedness_scan(
    traj: "Trajectory",
    plan: RepairRatePlan,
    l_frac: float = 0.9,
    fit: "DecayFit | None" = None,
) -> BoundednessScan:
    """Per-stage supremum of ``|alpha i (g p1)_x|`` over ``[0, l_frac L]``.

    Each row also carries the a-priori bound
    ``2 alpha^2 i (g(0) lam)^2 ||P(t - 2 H_i) - P*||`` evaluated on the
    recorded distance history (``bound_measured``; NaN when the lagged time
    precedes the trajectory), and, when ``fit`` is given, the same bound
    with the distance replaced by the fitted staged envelope
    (``bound_fitted``).  ``H_i`` is the travel horizon of stage ``i``.
    """
    if not 0.0 < l_frac < 1.0:
        raise InvalidParameterError(f"l_frac must lie in (0, 1), got {l_frac}")
    if plan.kind != "staged-feedback":
        raise InvalidParameterError("boundedness scan needs a staged plan")
    stages = traj.completed_stages()
    grid = traj.grid
    target = plan.target
    sched = plan.schedule
    alpha = plan.alpha
    x = grid.nodes
    ps = target.samples(grid)
    window = np.flatnonzero(x <= l_frac * grid.L)
    kappa = target.lam / float(ps[0])
    norm = target.p1_norm
    times = traj.times

    rows = []
    for i in stages:
        a = alpha * sched.gain(i)
        idx = np.flatnonzero(traj.stages == i)
        if idx.size == 0:
            raise InvalidTrajectoryError(f"no states recorded for stage {i}")
        sup = 0.0
        lag = 2.0 * norm / a
        worst_dist = 0.0
        for k in idx:
            q = traj.states[k].p1 / np.where(ps > 0, ps, 1.0)
            dq = np.gradient(q, x)
            sup = max(sup, float(np.max(np.abs(a * dq[window]))))
            tl = times[k] - lag
            d = np.interp(tl, times, traj.dist) if tl >= times[0] else np.nan
            worst_dist = max(worst_dist, d) if not np.isnan(d) else np.nan
        coef = 2.0 * alpha * a * kappa**2
        fitted = np.nan
        if fit is not None:
            rate = alpha * fit.eps0 * sched.c0
            fitted = (
                coef
                * fit.M0
                * math.exp(-rate * harmonic(i - 1))
                * math.exp(2.0 * sched.c0 * alpha * fit.eps0 * (i - 1) / i)
            )
        t0, t1 = traj.stage_marks[i]
        rows.append(
            StageScanRow(i, t0, t1, sup, coef * worst_dist, fitted, bool(t0 > lag))
        )
    return BoundednessScan(tuple(rows), l_frac, bool(sched.t_f > 2.0 * norm))
