"""Value types for the two-state repairable system and target profiles.

The state of the system is the pair ``(p0, p1)``: the probability ``p0``
of the good mode and the density ``p1(x)`` of being under repair with
elapsed repair time ``x`` in ``[0, L]``.  Densities are sampled at the
nodes of a :class:`SpatialGrid` and integrated with the composite
trapezoid rule.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._numerics import PiecewiseLinear, trapezoid
from .errors import IncompatibleGridsError, InvalidParameterError

MIN_CELLS = 8
FORMS = ("linear-decay", "quadratic-decay", "tabulated")


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpatialGrid:
    """Repair-time samples ``0 = x_0 < ... < x_N = L``."""

    L: float
    nodes: np.ndarray

    def __post_init__(self):
        nodes = _frozen_array(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not self.L > 0 or not np.isfinite(self.L):
            raise InvalidParameterError(f"L must be positive and finite, got {self.L}")
        if nodes.ndim != 1 or len(nodes) < MIN_CELLS + 1:
            raise InvalidParameterError(f"grid needs at least {MIN_CELLS} cells")
        if nodes[0] != 0.0 or not np.isclose(nodes[-1], self.L, rtol=0, atol=1e-14 * self.L):
            raise InvalidParameterError("grid must start at 0 and end at L")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidParameterError("grid nodes must be strictly increasing")

    @classmethod
    def uniform(cls, L: float, cells: int) -> "SpatialGrid":
        if cells < MIN_CELLS:
            raise InvalidParameterError(f"grid needs at least {MIN_CELLS} cells")
        nodes = np.linspace(0.0, L, cells + 1)
        nodes[-1] = L
        return cls(L, nodes)

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @property
    def h(self) -> float:
        """Largest cell width."""
        return float(np.max(np.diff(self.nodes)))

    def integrate(self, values) -> float:
        return trapezoid(values, self.nodes)

    def same_as(self, other: "SpatialGrid") -> bool:
        return self is other or (
            self.L == other.L
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
        )


@dataclass(frozen=True)
class SystemState:
    """Snapshot ``(p0, p1)`` at time ``t``.

    ``jump`` optionally records a known discontinuity of ``p1`` as
    ``(x, left_limit, right_limit)``.  The exact solvers set it while the
    characteristic carrying an incompatible corner (``p1(0,0) != lam*p0(0)``)
    is inside the domain; quadrature then splits the cell at ``x``.
    """

    p0: float
    p1: np.ndarray
    t: float = 0.0
    jump: tuple[float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "p1", _frozen_array(self.p1))
        object.__setattr__(self, "p0", float(self.p0))
        object.__setattr__(self, "t", float(self.t))

    def replace(self, **changes) -> "SystemState":
        data = {"p0": self.p0, "p1": self.p1, "t": self.t, "jump": self.jump}
        data.update(changes)
        return SystemState(**data)


@dataclass(frozen=True)
class TargetProfile:
    """Desired distribution ``(p0_star, p1_star(x))`` for failure rate ``lam``."""

    lam: float
    L: float
    p0_star: float
    p1_star: Callable[[np.ndarray], np.ndarray]
    dp1_star: Callable[[np.ndarray], np.ndarray]
    form: str
    params: dict = field(default_factory=dict)

    def samples(self, grid: SpatialGrid) -> np.ndarray:
        return np.asarray(self.p1_star(grid.nodes), dtype=float)

    def state(self, grid: SpatialGrid, t: float = 0.0) -> SystemState:
        return SystemState(self.p0_star, self.samples(grid), t)

    @property
    def p1_norm(self) -> float:
        """L1 norm of the target density."""
        if self.form == "tabulated":
            return trapezoid(self.params["p1"], self.params["x"])
        if self.form == "linear-decay":
            return self.params["C"] * self.L**2 / 2.0
        return self.params["C"] * self.L**3 / 3.0

    def to_dict(self) -> dict:
        out = {"form": self.form, "lambda": self.lam, "L": self.L}
        if self.form == "tabulated":
            out["table_path"] = self.params.get("path")
        else:
            out["params"] = {k: float(v) for k, v in self.params.items()}
        return out


def _check_rates(lam, L):
    if not (lam > 0 and np.isfinite(lam)):
        raise InvalidParameterError(f"lambda must be positive, got {lam}")
    if not (L > 0 and np.isfinite(L)):
        raise InvalidParameterError(f"L must be positive, got {L}")


def make_linear_target(lam: float, L: float) -> TargetProfile:
    """Target ``p1*(x) = C (L - x)`` with ``C = lam p0*/L``.

    Normalisation fixes ``p0* = 1 / (1 + lam L / 2)``.
    """
    _check_rates(lam, L)
    p0 = 1.0 / (1.0 + lam * L / 2.0)
    C = lam * p0 / L

    def p1(x):
        return C * (L - np.asarray(x, dtype=float))

    def dp1(x):
        return np.full_like(np.asarray(x, dtype=float), -C)

    return TargetProfile(lam, L, p0, p1, dp1, "linear-decay", {"C": C})


def make_quadratic_target(lam: float, L: float) -> TargetProfile:
    """Target ``p1*(x) = C (L - x)^2`` with ``p0* = 1 / (1 + lam L / 3)``."""
    _check_rates(lam, L)
    p0 = 1.0 / (1.0 + lam * L / 3.0)
    C = lam * p0 / L**2

    def p1(x):
        return C * (L - np.asarray(x, dtype=float)) ** 2

    def dp1(x):
        return -2.0 * C * (L - np.asarray(x, dtype=float))

    return TargetProfile(lam, L, p0, p1, dp1, "quadratic-decay", {"C": C})


def make_tabulated_target(lam: float, x, p1, path: str | None = None) -> TargetProfile:
    """Target from samples, interpolated piecewise-linearly.

    ``p0*`` is taken from the boundary condition ``p1*(0) = lam p0*``; the
    remaining conditions are left to :func:`validate_target`.  The
    derivative is the slope of the cell to the right of ``x`` (of the last
    cell at ``x = L``).
    """
    x = _frozen_array(x)
    p1 = _frozen_array(p1)
    if x.ndim != 1 or x.shape != p1.shape or len(x) < 2:
        raise InvalidParameterError("table needs two equal-length columns with >= 2 rows")
    if x[0] != 0.0 or np.any(np.diff(x) <= 0):
        raise InvalidParameterError("table x must start at 0 and increase strictly")
    L = float(x[-1])
    _check_rates(lam, L)
    interp = PiecewiseLinear(x, p1)
    slopes = np.diff(p1) / np.diff(x)

    def dp1(xq):
        return slopes[interp.locate(np.asarray(xq, dtype=float))]

    params = {"x": x, "p1": p1, "path": path}
    return TargetProfile(lam, L, float(p1[0]) / lam, interp, dp1, "tabulated", params)


def read_two_column_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an ``(x, value)`` CSV with a mandatory header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidParameterError(f"{path}: empty table")
    header, body = rows[0], rows[1:]
    try:
        float(header[0])
    except ValueError:
        pass
    else:
        raise InvalidParameterError(f"{path}: header row required")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in body])
    except (ValueError, IndexError) as exc:
        raise InvalidParameterError(f"{path}: malformed row ({exc})") from None
    if data.ndim != 2 or len(data) < 2:
        raise InvalidParameterError(f"{path}: need at least two data rows")
    return data[:, 0], data[:, 1]


def load_tabulated_target(path, lam: float) -> TargetProfile:
    x, p1 = read_two_column_csv(path)
    return make_tabulated_target(lam, x, p1, path=str(path))


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tolerance: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "residual": c.residual, "tolerance": c.tolerance, "passed": c.passed}
                for c in self.checks
            ],
        }


def validate_target(target: TargetProfile, grid: SpatialGrid, tol: float = 1e-10) -> ValidationReport:
    """Check a target against the admissibility conditions.

    Boundary compatibility ``p1*(0) = lam p0*``, vanishing at ``L``,
    strict positivity and strict decrease on the interior (with the strict
    inequalities relaxed to a margin of ``1e-12 * max p1*``) and unit total
    mass.  Failures are reported, never raised.
    """
    if not np.isclose(grid.L, target.L, rtol=1e-12, atol=0.0):
        raise IncompatibleGridsError(f"grid covers [0, {grid.L}], target lives on [0, {target.L}]")
    x = grid.nodes
    p = target.samples(grid)
    dp = np.asarray(target.dp1_star(x), dtype=float)
    eps_pos = 1e-12 * float(np.max(np.abs(p)))
    interior = slice(1, -1)

    checks = []
    r = abs(float(p[0]) - target.lam * target.p0_star)
    checks.append(Check("boundary_compatibility", r, tol, r <= tol))
    r = abs(float(p[-1]))
    checks.append(Check("endpoint_vanishing", r, tol, r <= tol))

    r = max(0.0, eps_pos - float(np.min(p[interior])))
    checks.append(Check("positivity", r, eps_pos, bool(np.all(p[interior] >= eps_pos))))

    worst = float(np.max(dp[interior])) + eps_pos
    steps = np.diff(p)
    if target.form == "tabulated":
        steps = np.concatenate((steps, np.diff(target.params["p1"])))
    worst = max(worst, float(np.max(steps)))
    checks.append(Check("monotone_decrease", max(0.0, worst), eps_pos, worst <= 0.0))

    r = abs(target.p0_star + grid.integrate(p) - 1.0)
    checks.append(Check("unit_mass", r, tol, r <= tol))
    return ValidationReport(tuple(checks))


def _knots(state: SystemState, grid: SpatialGrid, cuts) -> tuple[np.ndarray, np.ndarray]:
    """Grid nodes refined by ``cuts``; a cut is listed twice carrying the
    left and right limit (zero-width interval for the trapezoid rule)."""
    xs = list(grid.nodes)
    vs = list(state.p1)
    tol = 1e-12 * grid.L
    for c in sorted(cuts, reverse=True):
        if state.jump is not None and abs(state.jump[0] - c) <= tol:
            left, right = state.jump[1], state.jump[2]
        else:
            left = right = float(np.interp(c, grid.nodes, state.p1))
        k = int(np.searchsorted(grid.nodes, c))
        if k > 0 and abs(grid.nodes[k - 1] - c) <= tol:
            k -= 1
        if k < len(grid.nodes) and abs(grid.nodes[k] - c) <= tol:
            xs[k : k + 1] = [c, c]
            vs[k : k + 1] = [left, right]
        else:
            xs[k:k] = [c, c]
            vs[k:k] = [left, right]
    return np.array(xs), np.array(vs)


def _cuts(*states: SystemState) -> list[float]:
    return sorted({s.jump[0] for s in states if s.jump is not None})


def _check_grid(state: SystemState, grid: SpatialGrid):
    if state.p1.shape != grid.nodes.shape:
        raise IncompatibleGridsError(
            f"state has {state.p1.size} samples, grid has {grid.nodes.size} nodes"
        )


def total_mass(s: SystemState, grid: SpatialGrid) -> float:
    """``p0 + int_0^L p1 dx`` by composite trapezoid (split at a recorded jump)."""
    _check_grid(s, grid)
    if s.jump is None:
        return s.p0 + grid.integrate(s.p1)
    xs, vs = _knots(s, grid, _cuts(s))
    return s.p0 + trapezoid(vs, xs)


def x_norm_distance(a: SystemState, b: SystemState, grid: SpatialGrid) -> float:
    """``|a.p0 - b.p0| + ||a.p1 - b.p1||_L1`` on a shared grid."""
    _check_grid(a, grid)
    _check_grid(b, grid)
    cuts = _cuts(a, b)
    if not cuts:
        return abs(a.p0 - b.p0) + grid.integrate(np.abs(a.p1 - b.p1))
    xs, va = _knots(a, grid, cuts)
    _, vb = _knots(b, grid, cuts)
    return abs(a.p0 - b.p0) + trapezoid(np.abs(va - vb), xs)


def compatible_state(shape, lam: float, grid: SpatialGrid, t: float = 0.0) -> SystemState:
    """Unit-mass state with ``p1`` proportional to ``shape`` and
    ``p1(0) = lam p0`` (no corner discontinuity at ``x = 0``)."""
    shape = np.asarray(shape, dtype=float)
    if shape.shape != grid.nodes.shape or shape[0] <= 0 or np.any(shape < 0):
        raise InvalidParameterError("shape must be nonnegative on the grid with shape[0] > 0")
    c = 1.0 / (shape[0] / lam + grid.integrate(shape))
    return SystemState(c * shape[0] / lam, c * shape, t)
