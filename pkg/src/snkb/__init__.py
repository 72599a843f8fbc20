"""Self-normalised Bernstein/Hoeffding confidence bounds, kernel logistic
confidence sequences and an optimistic logistic bandit."""

from .bandit import ArmSet, BanditConfig, FStar, instance_constants, run_bandit, ucb_select
from .bounds import (
    ConfidenceConfig,
    StitchLevel,
    beta_fixed,
    hoeffding_radius,
    iota,
    iota_prime,
    omega,
    regret_bound_curve,
    stitched_radius,
)
from .kernels import GramState, KernelSpec, gram_append, gram_from_points, info_gain, kernel_eval, rho_star
from .logistic import (
    DualLogisticModel,
    FitError,
    confidence_band,
    fit,
    link_mu,
    logistic_loss,
    predict_mean,
    predictive_variance,
    primal_reference_fit,
    variance_fn,
)
from .validation import (
    NoiseModel,
    TraceConfig,
    coverage_experiment,
    self_norm_stat,
    simulate_trace,
    supermartingale_check,
    truncation_check,
)

__version__ = "0.1.0"

__all__ = [
    "ArmSet", "BanditConfig", "FStar", "instance_constants", "run_bandit", "ucb_select",
    "ConfidenceConfig", "StitchLevel", "beta_fixed", "hoeffding_radius", "iota", "iota_prime", "omega",
    "regret_bound_curve", "stitched_radius",
    "GramState", "KernelSpec", "gram_append", "gram_from_points", "info_gain", "kernel_eval", "rho_star",
    "DualLogisticModel", "FitError", "confidence_band", "fit", "link_mu", "logistic_loss", "predict_mean",
    "predictive_variance", "primal_reference_fit", "variance_fn",
    "NoiseModel", "TraceConfig", "coverage_experiment", "self_norm_stat", "simulate_trace",
    "supermartingale_check", "truncation_check",
]
