"""Checks on solver output.

Invariant audits cover mass, sign and the endpoint value.  Decay fits feed
the staged envelope ``M0 exp(-alpha eps0 c0 H_i)``, where ``H_i`` is the
harmonic partial sum.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .control import StageSchedule, harmonic
from .domain import SpatialGrid, TargetProfile, x_norm_distance
from .errors import FitUnreliableError, InvalidParameterError, InvalidTrajectoryError
from .trajectory import Trajectory, fmt

LOG_FLOOR = 1e-13
ENVELOPE_MULTIPLIER = 1.5


@dataclass(frozen=True)
class InvariantReport:
    max_mass_drift: float
    min_density: float
    max_endpoint_density: float
    tol_mass: float
    tol_neg: float
    tol_end: float

    @property
    def mass_ok(self) -> bool:
        return self.max_mass_drift <= self.tol_mass

    @property
    def nonnegative_ok(self) -> bool:
        return self.min_density >= -self.tol_neg

    @property
    def endpoint_ok(self) -> bool:
        return self.max_endpoint_density <= self.tol_end

    @property
    def passed(self) -> bool:
        return self.mass_ok and self.nonnegative_ok and self.endpoint_ok

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(
            mass_ok=self.mass_ok,
            nonnegative_ok=self.nonnegative_ok,
            endpoint_ok=self.endpoint_ok,
            passed=self.passed,
        )
        return out


def audit_invariants(
    traj: Trajectory,
    grid: SpatialGrid,
    tol_mass: float = 1e-6,
    tol_neg: float = 1e-12,
    tol_end: float = 1e-10,
) -> InvariantReport:
    """Worst mass drift, most negative sample (``p0`` or ``p1``) and largest
    ``|p1(L, t)|`` over the recorded states.

    The endpoint check skips the initial state: initial data may be
    positive at ``L``, the dynamics force ``p1(L, t) = 0`` only for later
    times.
    """
    if len(traj) == 0:
        raise InvalidTrajectoryError("empty trajectory")
    drift = float(np.max(np.abs(traj.mass - 1.0)))
    lowest = min(float(np.min(traj.min_p1)), min(s.p0 for s in traj.states))
    t0 = min(s.t for s in traj.states)
    later = [s for s in traj.states if s.t > t0] or list(traj.states)
    end = max(abs(float(s.p1[-1])) for s in later)
    return InvariantReport(drift, lowest, end, tol_mass, tol_neg, tol_end)


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit ``dist(t) ~ amplitude exp(-eps0 t)`` on ``window``.

    ``M0`` is the amplitude used in envelopes, floored at 1: the decay
    estimate ``dist(t) <= M0 exp(-eps0 t) dist(0)`` cannot hold with a
    constant below 1 at ``t = 0``.
    """

    amplitude: float
    eps0: float
    window: tuple[float, float]
    r_squared: float
    samples: int

    @property
    def M0(self) -> float:
        return max(self.amplitude, 1.0)

    def to_dict(self) -> dict:
        return {
            "M0": self.M0,
            "amplitude": self.amplitude,
            "eps0": self.eps0,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "samples": self.samples,
        }


def fit_log_linear(t, dist) -> DecayFit:
    t = np.asarray(t, dtype=float)
    d = np.asarray(dist, dtype=float)
    keep = d > LOG_FLOOR
    t, d = t[keep], d[keep]
    if t.size < 3:
        raise FitUnreliableError(f"only {t.size} samples above the {LOG_FLOOR:g} floor")
    res = stats.linregress(t, np.log(d))
    r2 = float(res.rvalue**2) if np.isfinite(res.rvalue) else 1.0
    return DecayFit(math.exp(res.intercept), -float(res.slope), (float(t[0]), float(t[-1])), r2, int(t.size))


def fit_decay(
    traj: Trajectory,
    target: TargetProfile,
    grid: SpatialGrid,
    skip_fraction: float = 0.2,
) -> DecayFit:
    """Fit the X-norm distance to the target after discarding the first
    ``skip_fraction`` of the time span.

    Raises :class:`FitUnreliableError` (carrying the fit) when the distance
    is not decreasing overall, or is nonmonotone with ``R^2 < 0.9``.
    """
    if not 0.0 <= skip_fraction < 1.0:
        raise InvalidParameterError(f"skip_fraction must lie in [0, 1), got {skip_fraction}")
    ref = target.state(grid)
    t = traj.times
    dist = np.array([x_norm_distance(s, ref, grid) for s in traj.states])
    start = t[0] + skip_fraction * (t[-1] - t[0])
    sel = t >= start
    fit = fit_log_linear(t[sel], dist[sel])
    window = dist[sel]
    monotone = bool(np.all(np.diff(window[window > LOG_FLOOR]) <= 0))
    if fit.eps0 <= 0:
        raise FitUnreliableError("distance does not decay over the fitted window", fit)
    if not monotone and fit.r_squared < 0.9:
        raise FitUnreliableError(
            f"distance is nonmonotone and the log-linear fit is poor (R^2={fit.r_squared:.3f})", fit
        )
    return fit


def stage_envelope(M0: float, eps0: float, alpha: float, c0: float, i: int, multiplier: float = ENVELOPE_MULTIPLIER) -> float:
    return multiplier * M0 * math.exp(-alpha * eps0 * c0 * harmonic(i))


@dataclass(frozen=True)
class EnvelopeRow:
    stage: int
    t_end: float
    harmonic: float
    measured: float
    envelope: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.envelope - self.measured


def check_stage_envelope(
    traj: Trajectory,
    schedule: StageSchedule,
    alpha: float,
    fit: DecayFit,
    target: TargetProfile,
    grid: SpatialGrid,
    multiplier: float = ENVELOPE_MULTIPLIER,
) -> list[EnvelopeRow]:
    """Compare each stage-end error with ``multiplier * M0 exp(-alpha eps0 c0 H_i)``."""
    ref = target.state(grid)
    rows = []
    for i in traj.completed_stages():
        state = traj.states[traj.stage_end_index(i)]
        measured = x_norm_distance(state, ref, grid)
        env = stage_envelope(fit.M0, fit.eps0, alpha, schedule.c0, i, multiplier)
        rows.append(EnvelopeRow(i, schedule.end(i), harmonic(i), measured, env, measured <= env))
    return rows


def write_envelope_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "t_i", "H_i", "measured", "envelope", "pass"])
        for r in rows:
            w.writerow([r.stage, fmt(r.t_end), fmt(r.harmonic), fmt(r.measured), fmt(r.envelope), int(r.passed)])
