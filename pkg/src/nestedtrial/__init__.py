"""Estimating treatment effects in all trial-eligible individuals from a
randomized trial nested within a cohort."""

__version__ = "0.1.0"

from .bootstrap import BootstrapConfig, BootstrapResult, bootstrap_ci, percentile_interval
from .data import CohortDataset, SchemaError, read_csv, write_csv
from .estimators import (
    Analysis,
    EffectReport,
    EstimationError,
    EstimationResult,
    Estimator,
    NuisanceModelError,
    PotentialMeanEstimates,
    PositivityWarning,
    WeightModel,
    contrast,
    estimate,
    estimate_dr1,
    estimate_dr2,
    estimate_ipw,
    estimate_om,
    estimate_trial_only,
    fit_nuisance_models,
)
from .glm import Family, FittedGlm, GlmError, fit_glm, predict_mean
from .simulation import (
    SimScenario,
    SimSummary,
    calibrate_intercept,
    calibrate_tau_binary,
    generate_cohort,
    run_factorial,
    run_scenario,
    true_effect,
)

__all__ = [name for name in dir() if not name.startswith("_")]
