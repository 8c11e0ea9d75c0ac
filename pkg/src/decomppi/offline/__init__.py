"""Estimation from logged trajectories: features, ridge z-hat, double ML, synthetic data."""

from .dataset import LoggedDataset, PatientLog, build_samples, featurize, future_verification_rate
from .dml import DoubleMLModel, LinearRegressor, double_ml_from_dataset, fit_double_ml
from .features import FEATURE_NAMES, HistoryTracker, condensed_history
from .ridge import RidgeModel, calibration_csv, calibration_table, fit_ridge, ridge_solve, zhat
from .synthetic import PopulationConfig, generate_synthetic_population

__all__ = [
    "FEATURE_NAMES",
    "DoubleMLModel",
    "HistoryTracker",
    "LinearRegressor",
    "LoggedDataset",
    "PatientLog",
    "PopulationConfig",
    "RidgeModel",
    "build_samples",
    "calibration_csv",
    "calibration_table",
    "condensed_history",
    "double_ml_from_dataset",
    "featurize",
    "fit_double_ml",
    "fit_ridge",
    "future_verification_rate",
    "generate_synthetic_population",
    "ridge_solve",
    "zhat",
]
