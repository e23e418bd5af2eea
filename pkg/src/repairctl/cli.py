"""Command-line front end.

Every subcommand reads a JSON run configuration, validates it completely
(including the target's admissibility where a solve is involved) and only
then computes and writes artifacts.  Exit codes: 0 pass, 1 check failure,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .charsolver import closed_loop_stage_solve, open_loop_solve, staged_control_solve, steady_state
from .control import build_schedule, mu_boundedness_scan, select_alpha, static_repair_rate, staged_plan
from .diagnostics import (
    ENVELOPE_MULTIPLIER,
    audit_invariants,
    check_stage_envelope,
    fit_decay,
    write_envelope_csv,
)
from .domain import (
    SpatialGrid,
    SystemState,
    TargetProfile,
    compatible_state,
    load_tabulated_target,
    make_linear_target,
    make_quadratic_target,
    read_two_column_csv,
    validate_target,
    x_norm_distance,
)
from .errors import FitUnreliableError, RepairCtlError, StepSizeError, VanishingDataWarning
from .fvsolver import FvConfig, closed_loop_fv_transformed, open_loop_fv
from .trajectory import fmt

log = logging.getLogger("repairctl")

CONFIG_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2
SNAPSHOT_COUNT = 6

SECTION_DEFAULTS = {
    "target": {"form": "linear-decay", "path": None},
    "initial": {"kind": "point-mass-good", "path": None, "shape": "quadratic"},
    "alpha": {"policy": "auto", "value": None},
    "grid": {"cells": 512, "steps_per_stage": 64, "dt": None},
    "stage": {"index": 1, "alpha": 1.0, "duration": None, "steps": 256},
    "tolerances": {
        "validate": 1e-6,
        "mass": 1e-6,
        "negativity": 1e-12,
        "endpoint": 1e-10,
        "final": 1e-3,
        "envelope_multiplier": ENVELOPE_MULTIPLIER,
    },
    "fit": {"skip_fraction": 0.2, "calibration_steps": 256},
    "compare": {"levels": [128, 256, 512], "cfl": 0.9, "t_end_open": 1.0, "t_end_closed": 0.3, "min_order": 0.9},
    "scan": {"enabled": False, "l_frac": 0.9, "ceiling_factor": 10.0},
}
TOP_DEFAULTS = {"lambda": 1.0, "L": 1.0, "t_f": 2.0, "t_end": 5.0, "i_max": 40, "output_dir": "out"}
INITIAL_KINDS = ("point-mass-good", "uniform-failure", "target", "steady-state", "compatible", "tabulated")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    lam: float
    L: float
    t_f: float
    t_end: float
    i_max: int
    output_dir: str
    target: dict
    initial: dict
    alpha: dict
    grid: dict
    stage: dict
    tolerances: dict
    fit: dict
    compare: dict
    scan: dict
    base: Path


def _merge(name: str, raw, defaults: dict) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be an object")
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown field(s) in '{name}': {', '.join(unknown)}")
    out = dict(defaults)
    out.update(raw)
    return out


def _positive(name: str, value, integer: bool = False):
    kind = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kind) or not math.isfinite(value) or value <= 0:
        raise ConfigError(f"'{name}' must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value


def _resolve(base: Path, path) -> Path:
    if not isinstance(path, str) or not path:
        raise ConfigError("table path must be a non-empty string")
    p = Path(path)
    p = p if p.is_absolute() else base / p
    if not p.is_file():
        raise ConfigError(f"table not found: {p}")
    return p


def parse_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    """Check a decoded JSON config and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config 'version' must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    known = {"version"} | set(TOP_DEFAULTS) | set(SECTION_DEFAULTS)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    top = {k: raw.get(k, v) for k, v in TOP_DEFAULTS.items()}
    sec = {k: _merge(k, raw.get(k), v) for k, v in SECTION_DEFAULTS.items()}

    for key in ("lambda", "L", "t_f", "t_end"):
        _positive(key, top[key])
    _positive("i_max", top["i_max"], integer=True)
    if not isinstance(top["output_dir"], str):
        raise ConfigError("'output_dir' must be a string")

    form = sec["target"]["form"]
    if form not in ("linear-decay", "quadratic-decay", "tabulated"):
        raise ConfigError(f"unknown target form {form!r}")
    if form == "tabulated":
        sec["target"]["path"] = str(_resolve(base, sec["target"]["path"]))

    kind = sec["initial"]["kind"]
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"unknown initial kind {kind!r}; expected one of {', '.join(INITIAL_KINDS)}")
    if kind == "tabulated":
        sec["initial"]["path"] = str(_resolve(base, sec["initial"]["path"]))
    if sec["initial"]["shape"] not in ("linear", "quadratic"):
        raise ConfigError("initial 'shape' must be 'linear' or 'quadratic'")

    policy = sec["alpha"]["policy"]
    if policy not in ("auto", "fixed"):
        raise ConfigError(f"alpha policy must be 'auto' or 'fixed', got {policy!r}")
    if policy == "fixed":
        _positive("alpha.value", sec["alpha"]["value"])

    g = sec["grid"]
    _positive("grid.cells", g["cells"], integer=True)
    _positive("grid.steps_per_stage", g["steps_per_stage"], integer=True)
    if g["dt"] is not None:
        _positive("grid.dt", g["dt"])
    st = sec["stage"]
    _positive("stage.index", st["index"], integer=True)
    _positive("stage.alpha", st["alpha"])
    _positive("stage.steps", st["steps"], integer=True)
    if st["duration"] is not None:
        _positive("stage.duration", st["duration"])
    for k, v in sec["tolerances"].items():
        _positive(f"tolerances.{k}", v)
    if not 0.0 <= sec["fit"]["skip_fraction"] < 1.0:
        raise ConfigError("fit.skip_fraction must lie in [0, 1)")
    _positive("fit.calibration_steps", sec["fit"]["calibration_steps"], integer=True)
    cmp = sec["compare"]
    if not isinstance(cmp["levels"], list) or len(cmp["levels"]) < 2:
        raise ConfigError("compare.levels needs at least two grid sizes")
    for n in cmp["levels"]:
        _positive("compare.levels", n, integer=True)
    for k in ("cfl", "t_end_open", "t_end_closed", "min_order"):
        _positive(f"compare.{k}", cmp[k])
    if not 0.0 < sec["scan"]["l_frac"] < 1.0:
        raise ConfigError("scan.l_frac must lie in (0, 1)")
    _positive("scan.ceiling_factor", sec["scan"]["ceiling_factor"])

    return RunConfig(
        float(top["lambda"]), float(top["L"]), float(top["t_f"]), float(top["t_end"]), int(top["i_max"]),
        top["output_dir"], base=base, **sec,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, path.parent)


def build_target(cfg: RunConfig) -> TargetProfile:
    form = cfg.target["form"]
    if form == "linear-decay":
        return make_linear_target(cfg.lam, cfg.L)
    if form == "quadratic-decay":
        return make_quadratic_target(cfg.lam, cfg.L)
    target = load_tabulated_target(cfg.target["path"], cfg.lam)
    if not math.isclose(target.L, cfg.L, rel_tol=1e-12):
        raise ConfigError(f"table ends at x={target.L}, config has L={cfg.L}")
    return target


def build_initial(cfg: RunConfig, target: TargetProfile, grid: SpatialGrid) -> SystemState:
    kind = cfg.initial["kind"]
    x = grid.nodes
    if kind == "point-mass-good":
        return SystemState(1.0, np.zeros_like(x))
    if kind == "uniform-failure":
        return SystemState(0.0, np.full_like(x, 1.0 / grid.L))
    if kind == "target":
        return target.state(grid)
    if kind == "steady-state":
        return steady_state(static_repair_rate(target, grid), cfg.lam, grid)
    if kind == "compatible":
        power = 1 if cfg.initial["shape"] == "linear" else 2
        return compatible_state((grid.L - x) ** power, cfg.lam, grid)
    tx, tp = read_two_column_csv(cfg.initial["path"])
    if tx[0] != 0.0 or not math.isclose(tx[-1], grid.L, rel_tol=1e-12) or np.any(np.diff(tx) <= 0):
        raise ConfigError("initial table must cover [0, L] with increasing x")
    p1 = np.interp(x, tx, tp)
    p0 = 1.0 - grid.integrate(p1)
    if np.any(p1 < 0) or p0 < 0:
        raise ConfigError("initial table must be nonnegative with mass at most 1")
    return SystemState(p0, p1)


@dataclass
class Prepared:
    cfg: RunConfig
    target: TargetProfile
    grid: SpatialGrid
    initial: SystemState
    out: Path


def prepare(cfg: RunConfig, out: str | None, need_admissible: bool = True) -> Prepared:
    """Build every input object; raises ConfigError or RepairCtlError before
    anything is written."""
    try:
        target = build_target(cfg)
        grid = SpatialGrid.uniform(cfg.L, cfg.grid["cells"])
        if need_admissible:
            report = validate_target(target, grid, cfg.tolerances["validate"])
            if not report.passed:
                raise _CheckFailure(f"target is not admissible: {', '.join(report.failed())}")
        initial = build_initial(cfg, target, grid)
        if cfg.alpha["policy"] == "fixed":
            p_at_0 = float(target.p1_star(np.array(0.0)))
            if cfg.alpha["value"] < p_at_0:
                raise ConfigError(f"fixed alpha {cfg.alpha['value']} is below p1*(0)={p_at_0}")
    except (RepairCtlError, ValueError) as exc:
        if isinstance(exc, _CheckFailure):
            raise
        raise ConfigError(str(exc)) from None
    return Prepared(cfg, target, grid, initial, Path(out or cfg.output_dir))


class _CheckFailure(Exception):
    pass


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")


def _snapshot_times(traj):
    return np.linspace(traj.times[0], traj.times[-1], SNAPSHOT_COUNT)


def cmd_validate(cfg: RunConfig, out: str | None) -> int:
    try:
        target = build_target(cfg)
        grid = SpatialGrid.uniform(cfg.L, cfg.grid["cells"])
    except (RepairCtlError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    report = validate_target(target, grid, cfg.tolerances["validate"])
    dest = Path(out or cfg.output_dir)
    dest.mkdir(parents=True, exist_ok=True)
    _write_json(dest / "validation.json", report.to_dict())
    for c in report.checks:
        print(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: residual {c.residual:.3e} (tol {c.tolerance:.1e})")
    return EXIT_OK if report.passed else EXIT_CHECK


def _audit(traj, grid, tol: dict):
    return audit_invariants(traj, grid, tol["mass"], tol["negativity"], tol["endpoint"])


def cmd_simulate_open(cfg: RunConfig, out: str | None) -> int:
    p = prepare(cfg, out)
    plan = static_repair_rate(p.target, p.grid)
    ref = steady_state(plan, cfg.lam, p.grid)
    try:
        traj = open_loop_solve(p.initial, plan, cfg.lam, cfg.t_end, dt=cfg.grid["dt"], grid=p.grid, reference=ref)
    except StepSizeError as exc:
        print(f"error: {exc}; hint: set grid.dt at most the smallest cell width {cfg.L / cfg.grid['cells']:.3e}",
              file=sys.stderr)
        return EXIT_CHECK
    report = _audit(traj, p.grid, cfg.tolerances)
    p.out.mkdir(parents=True, exist_ok=True)
    traj.write_csv(p.out / "trajectory.csv")
    traj.write_snapshots(p.out / "snapshots.csv", _snapshot_times(traj))
    summary = {
        "invariants": report.to_dict(),
        "initial_distance": float(traj.dist[0]),
        "final_distance": float(traj.dist[-1]),
        "steady_state_p0": ref.p0,
    }
    _write_json(p.out / "invariants.json", summary)
    print(f"distance to steady state {traj.dist[0]:.3e} -> {traj.dist[-1]:.3e}")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_simulate_closed_stage(cfg: RunConfig, out: str | None) -> int:
    p = prepare(cfg, out)
    st = cfg.stage
    alpha = cfg.alpha["value"] if cfg.alpha["policy"] == "fixed" else st["alpha"]
    duration = st["duration"] or build_schedule(cfg.t_f).length(st["index"])
    dt = duration / st["steps"]
    try:
        traj = closed_loop_stage_solve(p.initial, p.target, alpha, st["index"], duration, dt, p.grid)
    except StepSizeError as exc:
        print(f"error: {exc}; hint: raise stage.steps", file=sys.stderr)
        return EXIT_CHECK
    report = _audit(traj, p.grid, cfg.tolerances)
    summary = {"invariants": report.to_dict(), "alpha": alpha, "stage": st["index"], "dt": dt,
               "final_distance": float(traj.dist[-1])}
    try:
        summary["fit"] = fit_decay(traj, p.target, p.grid, cfg.fit["skip_fraction"]).to_dict()
    except FitUnreliableError as exc:
        summary["fit"] = None
        summary["fit_error"] = str(exc)
    p.out.mkdir(parents=True, exist_ok=True)
    traj.write_csv(p.out / "trajectory.csv")
    traj.write_snapshots(p.out / "snapshots.csv", _snapshot_times(traj))
    _write_json(p.out / "invariants.json", summary)
    return EXIT_OK if report.passed else EXIT_CHECK


def calibrate(target: TargetProfile, grid: SpatialGrid, t_f: float, skip: float, steps: int):
    """Stage-1 run with unit gain from ``(p0, p1) = (1, 0)``; returns the
    decay fit and the calibration trajectory."""
    c0 = build_schedule(t_f).c0
    start = SystemState(1.0, np.zeros_like(grid.nodes))
    with warnings.catch_warnings():
        # the empty initial density is exact here: nothing returns before the horizon
        warnings.simplefilter("ignore", VanishingDataWarning)
        traj = closed_loop_stage_solve(start, target, 1.0, 1, c0, c0 / steps, grid)
    return fit_decay(traj, target, grid, skip), traj


def _staged(p: Prepared, tol_final: float):
    cfg = p.cfg
    sched = build_schedule(cfg.t_f, cfg.i_max)
    fit, _ = calibrate(p.target, p.grid, cfg.t_f, cfg.fit["skip_fraction"], cfg.fit["calibration_steps"])
    if cfg.alpha["policy"] == "auto":
        alpha = select_alpha(p.target, sched.c0, fit.eps0)
    else:
        alpha = cfg.alpha["value"]
    run = staged_control_solve(
        p.initial, p.target, cfg.t_f, alpha, cfg.i_max, tol_final, cfg.grid["steps_per_stage"], p.grid, sched
    )
    return sched, fit, alpha, run


def _hypothesis_gate(target: TargetProfile, t_f: float) -> bool:
    norm = target.p1_norm
    if t_f > 2.0 * norm:
        return True
    msg = (f"boundedness hypothesis t_f > 2*||p1*||_L1 does not hold "
           f"(t_f={t_f:g}, 2*||p1*||_L1={2 * norm:g}); mu scan skipped")
    warnings.warn(msg, stacklevel=2)
    return False


def _scan_rows(scan):
    return [
        {"stage": r.stage, "t_start": r.t_start, "t_end": r.t_end, "sup": r.sup,
         "bound_measured": r.bound_measured, "bound_fitted": r.bound_fitted, "delay_regime": r.delay_regime}
        for r in scan.rows
    ]


def _scan_verdict(scan, factor: float) -> tuple[bool, float]:
    sups = scan.sups
    if sups.size < 2:
        return True, math.nan
    ceiling = factor * float(sups[1])
    return bool(np.all(sups[1:] <= ceiling)), ceiling


def _write_scan_csv(path: Path, scan, ceiling: float) -> None:
    lines = ["stage,t_start,t_end,sup,ceiling,bound_measured,bound_fitted"]
    for r in scan.rows:
        lines.append(",".join([str(r.stage), fmt(r.t_start), fmt(r.t_end), fmt(r.sup), fmt(ceiling),
                               fmt(r.bound_measured), fmt(r.bound_fitted)]))
    path.write_text("\n".join(lines) + "\n")


def cmd_control(cfg: RunConfig, out: str | None) -> int:
    p = prepare(cfg, out)
    sched, fit, alpha, run = _staged(p, cfg.tolerances["final"])
    rows = check_stage_envelope(run.trajectory, sched, alpha, fit, p.target, p.grid,
                                cfg.tolerances["envelope_multiplier"])
    envelope_ok = all(r.passed for r in rows)
    final_ok = run.final_error <= cfg.tolerances["final"]
    summary = {
        "final_error": run.final_error,
        "stages_run": run.stages_run,
        "stop_reason": run.stop_reason,
        "alpha": alpha,
        "alpha_policy": cfg.alpha["policy"],
        "c0": sched.c0,
        "fit": fit.to_dict(),
        "envelope_passed": envelope_ok,
        "final_passed": final_ok,
    }
    scan = None
    if cfg.scan["enabled"] and _hypothesis_gate(p.target, cfg.t_f):
        scan = mu_boundedness_scan(run.trajectory, staged_plan(p.target, alpha, sched), cfg.scan["l_frac"], fit)
        ok, ceiling = _scan_verdict(scan, cfg.scan["ceiling_factor"])
        summary["scan"] = {"passed": ok, "ceiling": ceiling, "rows": _scan_rows(scan)}
    p.out.mkdir(parents=True, exist_ok=True)
    run.trajectory.write_csv(p.out / "trajectory.csv")
    write_envelope_csv(rows, p.out / "envelope.csv")
    _write_json(p.out / "summary.json", summary)
    print(f"final X-norm error {run.final_error:.3e} after {run.stages_run} stage(s) ({run.stop_reason}); "
          f"alpha={alpha:.6g} eps0={fit.eps0:.6g}")
    if not final_ok:
        print(f"error: final error {run.final_error:.3e} exceeds tolerance {cfg.tolerances['final']:.1e}",
              file=sys.stderr)
    return EXIT_OK if final_ok and envelope_ok else EXIT_CHECK


def cmd_scan_mu(cfg: RunConfig, out: str | None) -> int:
    p = prepare(cfg, out)
    dest = p.out
    if not _hypothesis_gate(p.target, cfg.t_f):
        dest.mkdir(parents=True, exist_ok=True)
        _write_json(dest / "scan.json", {"skipped": True, "t_f": cfg.t_f, "p1_norm": p.target.p1_norm})
        return EXIT_OK
    # run through the last resolvable stage
    sched, fit, alpha, run = _staged(p, 0.0)
    scan = mu_boundedness_scan(run.trajectory, staged_plan(p.target, alpha, sched), cfg.scan["l_frac"], fit)
    ok, ceiling = _scan_verdict(scan, cfg.scan["ceiling_factor"])
    dest.mkdir(parents=True, exist_ok=True)
    _write_scan_csv(dest / "scan.csv", scan, ceiling)
    _write_json(dest / "scan.json", {"skipped": False, "passed": ok, "ceiling": ceiling, "alpha": alpha,
                                     "stages_run": run.stages_run, "rows": _scan_rows(scan)})
    print(f"mu scan over {len(scan.rows)} stages: max sup after stage 1 {np.max(scan.sups[1:], initial=0):.3e}, "
          f"ceiling {ceiling:.3e}")
    return EXIT_OK if ok else EXIT_CHECK


def observed_orders(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def compare_solvers(cfg: RunConfig, target: TargetProfile) -> dict:
    """FV against characteristics at each grid level; errors in the X-norm
    at the final time."""
    c = cfg.compare
    plan = static_repair_rate(target)
    out = {"open": [], "closed": []}
    for n in c["levels"]:
        grid = SpatialGrid.uniform(cfg.L, n)
        init = build_initial(cfg, target, grid)
        ex = open_loop_solve(init, plan, cfg.lam, c["t_end_open"], grid=grid)
        fv = open_loop_fv(init, plan, cfg.lam, FvConfig(n, c["cfl"], c["t_end_open"]))
        out["open"].append(x_norm_distance(ex.final, fv.final, grid))
        T = c["t_end_closed"]
        ex = closed_loop_stage_solve(init, target, 1.0, 1, T, T / (4 * n), grid)
        fv = closed_loop_fv_transformed(init, target, 1.0, 1, FvConfig(n, c["cfl"], T))
        out["closed"].append(x_norm_distance(ex.final, fv.final, grid))
    return out


def cmd_compare(cfg: RunConfig, out: str | None) -> int:
    p = prepare(cfg, out)
    levels = sorted(cfg.compare["levels"])
    cfg_sorted = RunConfig(**{**cfg.__dict__, "compare": {**cfg.compare, "levels": levels}})
    errs = compare_solvers(cfg_sorted, p.target)
    lines = ["problem,cells,error,order"]
    ok = True
    result = {}
    for problem, e in errs.items():
        orders = observed_orders(e)
        ok &= bool(np.all(orders >= cfg.compare["min_order"]))
        result[problem] = {"errors": e, "orders": orders.tolist()}
        for k, n in enumerate(levels):
            order = fmt(orders[k - 1]) if k else ""
            lines.append(f"{problem},{n},{fmt(e[k])},{order}")
        print(f"{problem}: orders {', '.join(f'{o:.3f}' for o in orders)}")
    p.out.mkdir(parents=True, exist_ok=True)
    (p.out / "compare.csv").write_text("\n".join(lines) + "\n")
    _write_json(p.out / "compare.json", {"passed": ok, "min_order": cfg.compare["min_order"], **result})
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "validate": cmd_validate,
    "simulate-open": cmd_simulate_open,
    "simulate-closed-stage": cmd_simulate_closed_stage,
    "control": cmd_control,
    "compare": cmd_compare,
    "scan-mu": cmd_scan_mu,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repairctl", description="Two-state repairable system toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, default=None, help="reserved; the solvers are deterministic")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except RepairCtlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
