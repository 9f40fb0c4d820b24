"""Event-enhanced quantum dynamics: hybrid classical+quantum jump processes and their master equation."""
from .engine import (
    EngineConfig,
    EventRecord,
    TrajectoryRecord,
    apply_jump,
    find_jump_time,
    propagate_step,
    run_thinning_batch,
    run_trajectory,
    run_trajectory_thinning,
    select_channel,
    simulate_ensemble,
    state_at,
    survival_identity_check,
)
from .ensemble import EnsembleEstimate, convergence_report, estimate_density, trace_distance
from .master import (
    DensityFamily,
    check_collapsibility,
    integrate,
    master_rhs,
    reduce_to_quantum,
)
from .model import (
    HybridModel,
    Operator,
    PureHybridState,
    build_model,
    check_detailed_balance,
    jump_probs,
    jump_rate,
    lambda_op,
)
from .rng import RngStream

__version__ = "0.1.0"
