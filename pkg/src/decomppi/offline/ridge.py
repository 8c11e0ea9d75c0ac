"""Per-action ridge regression of the future verification rate, and the z-hat index."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from ..errors import ConfigError, DimensionError, EmptyArmError
from .dataset import WARMUP, LoggedDataset, Samples, build_samples


def ridge_solve(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """argmin_theta ||y - X theta||^2 + lam ||theta||^2, via a Cholesky solve."""
    X = np.asarray(X, dtype=float)
    gram = X.T @ X
    if lam:
        gram = gram + lam * np.eye(X.shape[1])
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), X.T @ np.asarray(y, dtype=float))


def ridge_objective(X, y, theta, lam) -> float:
    r = np.asarray(y) - np.asarray(X) @ theta
    return float(r @ r + lam * theta @ theta)


@dataclass
class RidgeModel:
    theta0: np.ndarray
    theta1: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.theta1 = np.asarray(self.theta1, dtype=float)
        if self.theta0.shape != self.theta1.shape:
            raise DimensionError("theta0 and theta1 differ in shape")
        if not (np.all(np.isfinite(self.theta0)) and np.all(np.isfinite(self.theta1))):
            raise ValueError("non-finite coefficients")

    @property
    def effect(self) -> np.ndarray:
        return self.theta1 - self.theta0

    def zhat(self, features, remaining_days):
        return zhat(self, features, remaining_days)

    def to_dict(self) -> dict:
        return {"theta0": self.theta0.tolist(), "theta1": self.theta1.tolist(), "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "RidgeModel":
        try:
            return cls(np.asarray(d["theta0"], float), np.asarray(d["theta1"], float), float(d["lambda"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed ridge model: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "RidgeModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read model {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model {path} is not valid JSON: {exc}") from exc


def fit_ridge_samples(samples: Samples, lam: float = 1.0, eligible_only: bool = False) -> RidgeModel:
    keep = samples.eligible if eligible_only else np.ones(samples.action.size, dtype=bool)
    thetas = []
    for a in (0, 1):
        m = keep & (samples.action == a)
        if not m.any():
            raise EmptyArmError(f"no training samples with action {a}")
        thetas.append(ridge_solve(samples.X[m], samples.rate[m], lam))
    return RidgeModel(thetas[0], thetas[1], lam)


def fit_ridge(dataset: LoggedDataset, lam: float = 1.0, eligible_only: bool = False, warmup: int = WARMUP) -> RidgeModel:
    """Fit one coefficient vector per action to the future verification rate.

    With ``eligible_only`` the samples are restricted to days on which the
    patient had not verified for two days in a row.
    """
    if dataset.n_interventions == 0:
        raise EmptyArmError("dataset has no interventions")
    return fit_ridge_samples(build_samples(dataset, warmup), lam, eligible_only)


def zhat(model: RidgeModel, features, remaining_days):
    """``<theta1 - theta0, x> * remaining_days`` for one vector or a matrix of rows."""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != model.theta0.shape[0]:
        raise DimensionError(f"feature dimension {x.shape[-1]} != model dimension {model.theta0.shape[0]}")
    if np.any(np.asarray(remaining_days) < 0):
        raise ValueError("remaining_days must be >= 0")
    out = (x @ model.effect) * remaining_days
    return float(out) if np.ndim(out) == 0 else out


def calibration_table(predicted, outcome, bins: int = 10) -> list[tuple[float, float, int]]:
    """Rows ``(bin lower edge, empirical rate, count)`` over equal-width probability bins."""
    predicted = np.clip(np.asarray(predicted, dtype=float), 0.0, 1.0)
    outcome = np.asarray(outcome, dtype=float)
    which = np.minimum((predicted * bins).astype(int), bins - 1)
    rows = []
    for b in range(bins):
        m = which == b
        n = int(m.sum())
        rows.append((b / bins, float(outcome[m].mean()) if n else float("nan"), n))
    return rows


def calibration_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["prediction_bin", "empirical_rate", "count"])
    for lo, rate, n in rows:
        w.writerow([f"{lo:.2f}", "" if np.isnan(rate) else f"{rate:.6f}", n])
    return buf.getvalue()
