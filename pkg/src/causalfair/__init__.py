"""Fairness evaluation and mitigation for multi-stage decisions with potential outcomes."""

__version__ = "0.1.0"

from .counterfactual import (Gate, ImputedCohort, StageSpec, conditional_effect, impute_sequential,
                             rubin_pool, total_effect)
from .dgp import HiringParams, SyntheticCohort, generate, oracle_effects
from .fairness import (CounterfactualPredictionSet, FairnessReport, PredictionSet, causal_accuracy,
                       causal_calibration, causal_metrics, stat_metrics, theorem1_residual)
from .mitigation import MitigationMethod, causal_preprocess, reject_option, reweigh, train_mitigated
from .models import TrainConfig, fit_logistic, fit_mlp, predict, predict_proba
from .tabular import ColumnSpec, DataTable, SchemaError, load_csv, positivity_filter

__all__ = [
    "ColumnSpec", "CounterfactualPredictionSet", "DataTable", "FairnessReport", "Gate",
    "HiringParams", "ImputedCohort", "MitigationMethod", "PredictionSet", "SchemaError",
    "StageSpec", "SyntheticCohort", "TrainConfig", "causal_accuracy", "causal_calibration",
    "causal_metrics", "causal_preprocess", "conditional_effect", "fit_logistic", "fit_mlp",
    "generate", "impute_sequential", "load_csv", "oracle_effects", "positivity_filter", "predict",
    "predict_proba", "reject_option", "reweigh", "rubin_pool", "stat_metrics", "theorem1_residual",
    "total_effect", "train_mitigated",
]
