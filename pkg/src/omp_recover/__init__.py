"""Orthogonal matching pursuit with a normalized-residual stopping rule.

Also provides the sufficient-sample-size theory for exact support recovery
and a seeded Monte Carlo harness that checks the guarantees empirically.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DimensionMismatch,
    DomainError,
    GramSingular,
    HNotLessThanOne,
    InfeasibleTail,
    OmpRecoverError,
    SigmaNotPD,
    TooLarge,
    ZeroResidual,
)
from .omp import (
    GramInstance,
    OmpConfig,
    OmpTrace,
    RegressionInstance,
    SelectionRule,
    StepRecord,
    StopReason,
    compute_statistics,
    least_squares_on_support,
    run_omp,
    select_indices,
    update_fit,
)
from .theory import (
    GaussianRegimeParams,
    NRule,
    Regime,
    SubGaussianRegimeParams,
    TheoryConstants,
    plan,
)
from .designs import (
    CoefficientKind,
    CoefficientSpec,
    ConditionReport,
    DesignSpec,
    Ensemble,
    SigmaSpec,
    sample_coefficients,
    sample_design,
    sample_gram,
    sample_noise,
    verify_conditions,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    brute_force_best_subset,
    check_tail_bounds,
    run_experiment,
    run_trial,
)
