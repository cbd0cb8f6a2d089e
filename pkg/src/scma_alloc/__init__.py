"""Joint subcarrier and power allocation for uplink SCMA.

Sum-rate and max-min-fairness allocators built on cyclic concave-surrogate
block updates, together with the fading-channel simulator, greedy
baselines, an exhaustive small-instance oracle, and a Monte-Carlo
experiment harness.
"""

from .allocators import (
    BslmTrace,
    SurrogateContext,
    binarize_and_repair,
    initial_allocation,
    maxsr_surrogate_value_grad,
    penalty,
    penalty_gradient,
    run_max_min,
    run_max_sr,
    theta_value_grad_F,
    theta_value_grad_P,
    update_F_maxmin,
    update_F_maxsr,
    update_P_maxmin,
    update_P_maxsr,
)
from .barrier import (
    ConcaveProgram,
    NumericalDomainError,
    SmoothConstraint,
    SolveResult,
    find_feasible,
    maximize,
)
from .baselines import PfState, allocate_sorted, brute_force_oracle, fuo, oa, pf
from .channel import (
    ChannelState,
    DopplerParams,
    bessel_j0,
    dbm_to_watt,
    doppler_correlation,
    doppler_frequency_for_rho_sq,
    draw_channel,
    evolve_channel,
    noise_power,
    place_users,
)
from .harness import (
    ResultRow,
    RetentionRow,
    Scenario,
    TraceRow,
    emit,
    jain_index,
    load_scenario,
    read_csv,
    run_convergence_trace,
    run_outdated_csi,
    run_sweep,
)
from .system import (
    Allocation,
    ConstraintViolation,
    RateBreakdown,
    SystemConfig,
    canonical_factor_graph,
    min_user_rate,
    per_user_rates,
    sum_rate,
    validate_allocation,
)

__version__ = "0.1.0"
