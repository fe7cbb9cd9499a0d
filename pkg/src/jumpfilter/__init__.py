"""Nonlinear filtering for signals and observations with predictable and inaccessible jumps."""
from .history import (
    History,
    TrajectoryE,
    JumpRecord,
    FiniteSpace,
    IntervalSpace,
    RealLine,
    to_trajectory,
    from_trajectory,
    jump_count_before,
    total_jumps,
    current_value,
    join,
    distance,
)
from .model import (
    Kernel,
    PredictableClock,
    ObservationCoefficients,
    SignalSpec,
    ObservationSpec,
    ModelSpec,
    ModelError,
    validate,
    finite_model,
    preset_deterministic_jumps,
    preset_threshold_regime,
    preset_reflecting,
    PRESETS,
)
from .simulate import ObservationRecord, ObservedEvent, SystemPath, SimulationError, simulate, observe
from .compensators import (
    SizeSet,
    mu_increment,
    nu_increment,
    bold_mu_increment,
    muY_increment,
    hat_muY_increment,
    compensator_residual,
    innovation_increments,
)
from .filter import (
    FilterConfig,
    FilterError,
    FilterState,
    FilterTrajectory,
    ExactModeUnsupported,
    init,
    run,
    gamma,
    jump_decomposition,
)
from .oracle import OracleError, bootstrap_pf, compare, enumerate_posterior, total_variation
from .estimators import HistoryFilter

__version__ = "0.1.0"
