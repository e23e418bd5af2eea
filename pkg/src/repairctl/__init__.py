"""Simulation and repair-rate control for a two-state repairable system.

The good mode has probability ``p0(t)``; the failed mode carries a density
``p1(x, t)`` over elapsed repair time ``x`` in ``[0, L]``.  The package
solves the model exactly along characteristics and synthesises repair
rates: a static design whose steady state is a prescribed target, and a
staged bilinear feedback law that reaches the target at a prescribed time.
"""
from .charsolver import (
    StagedRun,
    TravelMap,
    build_travel_map,
    closed_loop_stage_solve,
    open_loop_solve,
    staged_control_solve,
    steady_state,
)
from .control import (
    RepairRatePlan,
    StageSchedule,
    build_schedule,
    evaluate_feedback_mu,
    mu_boundedness_scan,
    select_alpha,
    staged_plan,
    static_repair_rate,
)
from .diagnostics import DecayFit, audit_invariants, check_stage_envelope, fit_decay
from .domain import (
    SpatialGrid,
    SystemState,
    TargetProfile,
    compatible_state,
    load_tabulated_target,
    make_linear_target,
    make_quadratic_target,
    make_tabulated_target,
    total_mass,
    validate_target,
    x_norm_distance,
)
from .errors import (
    FitUnreliableError,
    IncompatibleGridsError,
    InvalidParameterError,
    InvalidTrajectoryError,
    RepairCtlError,
    SingularTargetError,
    StepSizeError,
    VanishingDataWarning,
)
from .fvsolver import FvConfig, closed_loop_fv_transformed, open_loop_fv
from .trajectory import Trajectory

__version__ = "0.1.0"
