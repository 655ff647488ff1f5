"""Fractional interference alignment for finite-alphabet interference channels.

Closed-form alignment precoders (IA and fractional IA), distance-based
objectives with analytic gradients, conjugate-gradient precoder
optimization, minimum-distance and LMMSE receivers, and a Monte Carlo BER
harness for K-user MIMO interference channels.
"""

__version__ = "0.1.0"

from .alignment import (
    AlignmentReport,
    PrecoderSet,
    check_fia_constraints,
    fia_3user_mimo,
    fia_3user_siso,
    ia_3user_closed_form,
    kuser_siso_asymptotic,
    normalize_power,
    random_precoders,
    select_spac_columns,
    subspace_rank,
)
from .constellation import Constellation, SymbolSpace, bpsk, enumerate_vectors, error_vectors, qpsk
from .exceptions import (
    CapacityError,
    ConditioningError,
    DegenerateDistanceError,
    FracAlignError,
    InfeasibleError,
    SelectionError,
    ValidationError,
)
from .gradient_opt import (
    OptimizerOptions,
    cgd_optimize,
    gradient,
    local_opt_structure_residual,
    optimize_multistart,
    power_scaling_monotonicity_check,
    reciprocal_rank_B,
)
from .metrics import (
    ObjectiveSpec,
    alpha_weights,
    distance_table,
    error_covariance,
    interference_covariance,
    objective_value,
)
from .receivers import DetectionResult, lemma2_distance_growth, lmmse_combiner, lmmse_detect, md_detect
from .scenario import ChannelSet, Scenario, draw_channels, reciprocal
from .simulate import SimResult, SweepConfig, detect_floor, min_mse_baseline, run_ber_sweep, snr_gain
