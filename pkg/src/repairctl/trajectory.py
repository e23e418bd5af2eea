"""Time-indexed solver output and its CSV exports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import SpatialGrid, SystemState, total_mass, x_norm_distance
from .errors import InvalidTrajectoryError


def fmt(value) -> str:
    """Round-trip scientific notation used in every CSV artifact."""
    return f"{float(value):.17e}"


@dataclass(frozen=True)
class Trajectory:
    """States in time order plus per-state diagnostics.

    ``stages[k]`` is the stage index of ``states[k]`` (0 for open-loop
    runs); ``stage_marks`` maps a stage index to its ``(start, end)``
    times.  ``reference`` is the state distances are measured against.
    """

    grid: SpatialGrid
    states: tuple[SystemState, ...]
    stages: np.ndarray
    stage_marks: dict
    reference: SystemState | None
    mass: np.ndarray
    min_p1: np.ndarray
    dist: np.ndarray
    info: dict = field(default_factory=dict)

    @classmethod
    def from_states(cls, states, grid, reference=None, stages=None, stage_marks=None, info=None):
        states = tuple(states)
        if not states:
            raise InvalidTrajectoryError("trajectory needs at least one state")
        times = np.array([s.t for s in states])
        if np.any(np.diff(times) <= 0):
            raise InvalidTrajectoryError("trajectory times must be strictly increasing")
        if stages is None:
            stages = np.zeros(len(states), dtype=int)
        stages = np.asarray(stages, dtype=int)
        mass = np.array([total_mass(s, grid) for s in states])
        min_p1 = np.array([float(np.min(s.p1)) for s in states])
        if reference is None:
            dist = np.full(len(states), np.nan)
        else:
            dist = np.array([x_norm_distance(s, reference, grid) for s in states])
        for arr in (stages, mass, min_p1, dist):
            arr.setflags(write=False)
        return cls(grid, states, stages, dict(stage_marks or {}), reference, mass, min_p1, dist, dict(info or {}))

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> SystemState:
        return self.states[-1]

    def __len__(self):
        return len(self.states)

    def stage_end_index(self, i: int) -> int:
        if i not in self.stage_marks:
            raise InvalidTrajectoryError(f"trajectory has no mark for stage {i}")
        idx = np.flatnonzero(self.stages == i)
        if idx.size == 0:
            raise InvalidTrajectoryError(f"trajectory has no states in stage {i}")
        return int(idx[-1])

    def completed_stages(self) -> list[int]:
        if not self.stage_marks:
            raise InvalidTrajectoryError("trajectory carries no stage marks")
        return sorted(self.stage_marks)

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "stage", "p0", "mass", "min_p1", "dist_to_target"])
            for s, i, m, mn, d in zip(self.states, self.stages, self.mass, self.min_p1, self.dist):
                w.writerow([fmt(s.t), int(i), fmt(s.p0), fmt(m), fmt(mn), fmt(d)])

    def write_snapshots(self, path, times) -> None:
        """Wide CSV: one row per grid node, one column per requested time
        (the nearest recorded state is used)."""
        path = Path(path)
        ts = self.times
        picks = [int(np.argmin(np.abs(ts - t))) for t in times]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x"] + [f"p1@{fmt(ts[k])}" for k in picks])
            for j, x in enumerate(self.grid.nodes):
                w.writerow([fmt(x)] + [fmt(self.states[k].p1[j]) for k in picks])


def concatenate(parts, grid, reference, stage_marks, info=None) -> Trajectory:
    """Chain stage trajectories, dropping each repeated stage-start state."""
    states, stages = [], []
    for k, part in enumerate(parts):
        start = 0 if k == 0 else 1
        states.extend(part.states[start:])
        stages.extend(part.stages[start:])
    return Trajectory.from_states(states, grid, reference, stages, stage_marks, info)
