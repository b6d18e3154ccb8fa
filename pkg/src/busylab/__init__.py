"""busylab: busy-period laboratory for a service-modulated M/M/1-PS queue.

Closed forms for the unmodulated queue, coupled simulation of the modulated
one, and Monte-Carlo estimators for the expansion of busy duration, busy
area and mean per-flow bit rate in the modulation amplitude.
"""

__version__ = "0.1.0"

from .environment import EnvTrajectory, MarkovEnv, constant_env, two_state_symmetric
from .exact import (
    BusyStats,
    QueueParams,
    bitrate_gap_exp_corr,
    busy_lst,
    busy_moments,
    busy_stats,
    constant_shift_reference,
    constant_shift_taylor,
    rsr_bitrate,
    rsr_bitrate_linear,
    size_biased_lst,
    weighted_exp_integral,
)
from .simulate import (
    BaselineMoments,
    BusyPeriodPath,
    CoupledRecord,
    CoupledStats,
    Level1Decomposition,
    Level1Stats,
    MomentEstimate,
    baseline_moments,
    busy_period,
    busy_samples,
    coupled_busy_periods,
    coupled_samples,
    coupled_stats,
    decompose_level1,
    direct_perturbed_samples,
    first_subbusy_samples,
    level1_statistics,
    perturbed_busy_period,
)
from .expansion import (
    CoefficientEstimate,
    ExpansionSummary,
    area_coeff_cross,
    area_coeff_down_down,
    area_coeff_up_up,
    bitrate_gap_down_only,
    bitrate_gap_up_only,
    bitrate_quad_coeff,
    busy_coeff_down,
    busy_coeff_up,
    estimate_gap_coeff,
    expansion_summary,
    first_event_prob_fit,
    first_order_coeffs,
    gap_coeff_limits,
)
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    ExperimentReport,
    GateResult,
    run_coeffs,
    run_eps_sweep,
    run_fast_slow,
    run_special_cases,
    run_validate_baseline,
    write_csv,
)
