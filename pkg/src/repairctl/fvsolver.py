"""First-order upwind finite-volume solvers, used as independent checks on
the characteristic solvers.

Open loop: cell averages of ``p1`` advected at unit speed in ``x``, the
hazard applied as an exact per-cell survival factor, and everything that
leaves the repair state handed back to ``p0`` in the same step.

Closed loop: advection of ``phi = alpha i p1 / p1*`` at unit speed in the
travel coordinate ``y = (1/(alpha i)) int_0^x p1*``, where the feedback
velocity ``alpha i / p1*`` (unbounded at ``L``) becomes 1.  In ``y`` the
density ``phi`` carries the repair-state mass: ``int p1 dx = int phi dy``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._numerics import PiecewiseLinear
from .charsolver import build_travel_map
from .control import RepairRatePlan
from .domain import MIN_CELLS, SpatialGrid, SystemState, TargetProfile
from .errors import InvalidParameterError
from .trajectory import Trajectory

MIN_FV_CELLS = 16


@dataclass(frozen=True)
class FvConfig:
    cells: int
    cfl: float
    t_end: float

    def __post_init__(self):
        if self.cells < MIN_FV_CELLS:
            raise InvalidParameterError(f"need at least {MIN_FV_CELLS} cells, got {self.cells}")
        if not 0.0 < self.cfl <= 1.0:
            raise InvalidParameterError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.t_end > 0:
            raise InvalidParameterError(f"t_end must be positive, got {self.t_end}")


def upwind_advect(cells: np.ndarray, inflow: float, nu: float) -> tuple[np.ndarray, float]:
    """One upwind step at unit speed and Courant number ``nu``.

    Returns the new cell values and the outflow flux divided by the
    velocity (the value that leaves through the right face).
    """
    upstream = np.empty_like(cells)
    upstream[0] = inflow
    upstream[1:] = cells[:-1]
    return cells - nu * (cells - upstream), float(cells[-1])


def _cells_from_nodes(values: np.ndarray) -> np.ndarray:
    # pairwise means: sum(dx * means) equals the trapezoid mass
    return 0.5 * (values[:-1] + values[1:])


def _steps(t_end: float, dt: float) -> tuple[int, float]:
    n = int(np.ceil(t_end / dt - 1e-9))
    return n, t_end / n


def open_loop_fv(
    initial: SystemState,
    plan: RepairRatePlan,
    lam: float,
    cfg: FvConfig,
    reference: SystemState | None = None,
    record_every: int = 1,
) -> Trajectory:
    """Upwind solve of the open-loop model on ``cfg.cells`` uniform cells.

    The output grid has one node per cell face; node values are the mean
    of the adjacent cells, ``lam p0`` at ``x = 0`` and 0 at ``x = L``.
    """
    if plan.kind != "static":
        raise InvalidParameterError("open-loop solver needs a static plan")
    grid = SpatialGrid.uniform(plan.L, cfg.cells)
    if initial.p1.shape != grid.nodes.shape:
        raise InvalidParameterError("initial state must be sampled on the FV face grid")
    dx = grid.L / cfg.cells
    n, dt = _steps(cfg.t_end, cfg.cfl * dx)
    nu = dt / dx
    S = np.asarray(plan.survival(grid.nodes), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(S[:-1] > 0, S[1:] / S[:-1], 0.0)
    # exp(-dt * cell-mean hazard); the last cell empties in one step when
    # the hazard is not integrable at L
    keep = ratio**nu

    p0 = initial.p0
    u = _cells_from_nodes(initial.p1)

    def snapshot(t):
        p1 = np.empty(cfg.cells + 1)
        p1[0] = lam * p0
        p1[1:-1] = 0.5 * (u[:-1] + u[1:])
        p1[-1] = 0.0
        return SystemState(p0, p1, initial.t + t)

    states = [snapshot(0.0)]
    for k in range(1, n + 1):
        inflow = lam * p0
        u, out = upwind_advect(u, inflow, nu)
        lost = dx * np.sum(u * (1.0 - keep))
        u = u * keep
        p0 = p0 - dt * inflow + lost + dt * out
        if k % record_every == 0 or k == n:
            states.append(snapshot(k * dt))
    info = {"dt": dt, "cells": cfg.cells, "cfl": cfg.cfl, "solver": "open-loop-fv"}
    return Trajectory.from_states(states, grid, reference, info=info)


def closed_loop_fv_transformed(
    initial: SystemState,
    target: TargetProfile,
    alpha: float,
    i: int,
    cfg: FvConfig,
    reference: SystemState | None = None,
    record_every: int = 1,
) -> Trajectory:
    """Upwind solve of one closed-loop stage in the travel coordinate.

    ``cfg.cells`` sets both the number of ``y`` cells and the uniform
    ``x`` grid the result is reported on.
    """
    grid = SpatialGrid.uniform(target.L, cfg.cells)
    if initial.p1.shape != grid.nodes.shape:
        raise InvalidParameterError("initial state must be sampled on the FV face grid")
    tm = build_travel_map(target, alpha, i, grid)
    a = alpha * i
    H = tm.horizon
    dy = H / cfg.cells
    n, dt = _steps(cfg.t_end, cfg.cfl * dy)
    nu = dt / dy
    P = target.samples(grid)
    kappa = target.lam / float(P[0])

    # cell averages of phi from the exact mass of the initial density
    faces_y = np.linspace(0.0, H, cfg.cells + 1)
    faces_x = tm.inverse(faces_y)
    V = PiecewiseLinear(grid.nodes, initial.p1)
    u = np.diff(V.antiderivative(faces_x)) / dy
    centers = 0.5 * (faces_y[:-1] + faces_y[1:])
    y_nodes = tm.forward(grid.nodes)
    p0 = initial.p0

    def snapshot(t):
        phi = np.interp(y_nodes, np.concatenate(([0.0], centers)), np.concatenate(([a * kappa * p0], u)))
        return SystemState(p0, phi * P / a, initial.t + t)

    states = [snapshot(0.0)]
    for k in range(1, n + 1):
        inflow = a * kappa * p0
        u, out = upwind_advect(u, inflow, nu)
        p0 = p0 + dt * (out - inflow)
        if k % record_every == 0 or k == n:
            states.append(snapshot(k * dt))
    info = {"dt": dt, "cells": cfg.cells, "cfl": cfg.cfl, "horizon": H, "solver": "closed-loop-fv"}
    return Trajectory.from_states(
        states, grid, reference, stages=[i] * len(states), stage_marks={i: (initial.t, initial.t + cfg.t_end)}, info=info
    )


__all__ = ["FvConfig", "upwind_advect", "open_loop_fv", "closed_loop_fv_transformed", "MIN_CELLS"]
