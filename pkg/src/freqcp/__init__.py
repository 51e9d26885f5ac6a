"""Frequency-based conformal prediction and risk control for multiple-choice QA."""

__version__ = "0.1.0"

from .conformal import (
    FULL_SET_THRESHOLD,
    CalibrationMethod,
    CalibrationResult,
    NonconformityScore,
    PredictionSet,
    calibrate,
    calibrate_quantile,
    calibrate_risk,
    nonconformity,
    predict_set,
    predict_set_pvalue,
    predict_set_threshold,
    pvalue,
)
from .mcqa import (
    FrequencyTable,
    McqaItem,
    SampleRecord,
    ScoreMode,
    estimate_frequencies,
    parse_generation,
    point_prediction,
)
from .metrics import EvalReport, EvalRow, apss, auroc, emr, sweep
from .synth import OracleConfig, SyntheticBatch, generate

__all__ = [
    "__version__",
    "FULL_SET_THRESHOLD",
    "CalibrationMethod",
    "CalibrationResult",
    "EvalReport",
    "EvalRow",
    "FrequencyTable",
    "McqaItem",
    "NonconformityScore",
    "OracleConfig",
    "PredictionSet",
    "SampleRecord",
    "ScoreMode",
    "SyntheticBatch",
    "apss",
    "auroc",
    "calibrate",
    "calibrate_quantile",
    "calibrate_risk",
    "emr",
    "estimate_frequencies",
    "generate",
    "nonconformity",
    "parse_generation",
    "point_prediction",
    "predict_set",
    "predict_set_pvalue",
    "predict_set_threshold",
    "pvalue",
    "sweep",
]
