"""Policy optimization for two-player zero-sum linear quadratic games.

Exact and derivative-free solvers for finite-horizon dynamic games where a
minimizing controller and a maximizing disturbance share a linear system,
plus the risk-sensitive and attenuation formulations whose optimal
controllers coincide with the game's saddle point.
"""

from .core import (
    Gradients,
    InnerSolution,
    NashSolution,
    ValuePair,
    closed_loop,
    correlation_blocks,
    correlation_matrix,
    gradients,
    grde,
    inner_riccati,
    objective,
    pl_constant,
    smoothness_probe,
    value_blocks,
    value_matrix,
    value_pair,
)
from .equiv import (
    DaSystem,
    EquivalenceReport,
    LeqgSystem,
    RdeSolution,
    da_gradients,
    da_rde,
    da_values,
    formulation_from_dict,
    leqg_gradient,
    leqg_rde,
    leqg_value,
    to_game,
    verify_equivalence,
)
from .errors import (
    AssumptionViolated,
    AttenuationFeasibility,
    ConfigError,
    InfeasibleGain,
    LqError,
    RiskFeasibility,
    SingularLambda,
    SingularMatrix,
)
from .exact import (
    LoopConfig,
    RunTrace,
    TraceRow,
    double_loop,
    gda_variant,
    inner_update,
    outer_update,
    solve_inner,
    stepsize_bounds,
)
from .presets import get_preset, preset_names
from .system import (
    CompactGame,
    GainSchedule,
    NoiseModel,
    TimeVaryingSystem,
    compactify,
)
from .zeroth import (
    Rollout,
    SeededStream,
    ZoConfig,
    draw_noise,
    estimate_inner,
    estimate_outer,
    rollout,
    sample_unit_perturbation,
    zo_double_loop,
    zo_inner,
    zo_outer,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolated",
    "AttenuationFeasibility",
    "CompactGame",
    "ConfigError",
    "DaSystem",
    "EquivalenceReport",
    "GainSchedule",
    "Gradients",
    "InfeasibleGain",
    "InnerSolution",
    "LeqgSystem",
    "LoopConfig",
    "LqError",
    "NashSolution",
    "NoiseModel",
    "RdeSolution",
    "RiskFeasibility",
    "Rollout",
    "RunTrace",
    "SeededStream",
    "SingularLambda",
    "SingularMatrix",
    "TimeVaryingSystem",
    "TraceRow",
    "ValuePair",
    "ZoConfig",
    "closed_loop",
    "compactify",
    "correlation_blocks",
    "correlation_matrix",
    "da_gradients",
    "da_rde",
    "da_values",
    "double_loop",
    "draw_noise",
    "estimate_inner",
    "estimate_outer",
    "formulation_from_dict",
    "gda_variant",
    "get_preset",
    "gradients",
    "grde",
    "inner_riccati",
    "inner_update",
    "leqg_gradient",
    "leqg_rde",
    "leqg_value",
    "objective",
    "outer_update",
    "pl_constant",
    "preset_names",
    "rollout",
    "sample_unit_perturbation",
    "smoothness_probe",
    "solve_inner",
    "stepsize_bounds",
    "to_game",
    "value_blocks",
    "value_matrix",
    "value_pair",
    "verify_equivalence",
    "zo_double_loop",
    "zo_inner",
    "zo_outer",
]
