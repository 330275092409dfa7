"""Estimators, metrics, selection and importance."""

from .estimator import FAMILIES, Estimator, fit, load_model, predict, predict_scores, save_model
from .importance import ImportanceReport, feature_importance
from .metrics import MetricsReport, capture_rate, compute_metrics, roc_auc
from .selection import DEFAULT_GRIDS, grid_search_select, tune_hyperparameters

__all__ = [
    "FAMILIES", "Estimator", "fit", "load_model", "predict", "predict_scores", "save_model",
    "ImportanceReport", "feature_importance", "MetricsReport", "capture_rate", "compute_metrics",
    "roc_auc", "DEFAULT_GRIDS", "grid_search_select", "tune_hyperparameters",
]
