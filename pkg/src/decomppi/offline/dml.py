"""Residual-on-residual (double ML) estimation of a linear treatment effect.

Model: ``Y = tau(X) T + g(X) + eps`` and ``T = f(X) + eta`` with
``tau(X) = <theta, [1, X]>``. Stage one predicts ``E[Y|X]`` and ``E[T|X]`` out
of fold; stage two regresses the outcome residual on the treatment residual
times ``[1, X]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DegeneratePropensityError
from .dataset import LoggedDataset, build_samples


class LinearRegressor:
    """Least squares with an unpenalized intercept and optional ridge penalty."""

    def __init__(self, lam: float = 1.0):
        self.lam = float(lam)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.x_mean = X.mean(axis=0)
        self.y_mean = y.mean()
        Xc = X - self.x_mean
        gram = Xc.T @ Xc + self.lam * np.eye(X.shape[1])
        self.coef = np.linalg.solve(gram, Xc.T @ (y - self.y_mean))
        return self

    def predict(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) @ self.coef + self.y_mean


def make_regressor(config: dict | None):
    config = dict(config or {"kind": "ridge"})
    kind = config.pop("kind", "ridge")
    if kind == "ridge":
        return lambda: LinearRegressor(config.get("lambda", 1.0))
    if kind == "ols":
        return lambda: LinearRegressor(0.0)
    raise ConfigError(f"unknown base regressor {kind!r} (expected 'ridge' or 'ols')")


@dataclass
class DoubleMLModel:
    theta: np.ndarray  # [intercept, slopes...]
    stderr: np.ndarray
    outcome_models: list = field(repr=False)
    propensity_models: list = field(repr=False)
    orthogonality: float = 0.0

    def effect(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.theta.size == 1:
            return np.full(X.shape[0], self.theta[0])
        return self.theta[0] + X @ self.theta[1:]

    def outcome(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.outcome_models], axis=0)

    def propensity(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.propensity_models], axis=0)


def fit_double_ml(
    X, treatment, outcome, regressor=None, folds: int = 2, seed: int = 0, constant_effect: bool = False
) -> DoubleMLModel:
    """Cross-fitted double ML.

    ``regressor`` is a zero-argument factory returning an object with
    ``fit(X, y)`` and ``predict(X)`` (a dict config is also accepted).
    With ``constant_effect`` the second stage fits only the intercept.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(treatment, dtype=float)
    Y = np.asarray(outcome, dtype=float)
    n = X.shape[0]
    if folds < 2:
        raise ConfigError("cross-fitting needs at least 2 folds")
    if T.min() == T.max():
        raise DegeneratePropensityError("treatment is constant: both actions must be present")
    factory = regressor if callable(regressor) else make_regressor(regressor)
    fold = np.random.default_rng(seed).permutation(n) % folds
    y_res = np.empty(n)
    t_res = np.empty(n)
    q_models, f_models = [], []
    for k in range(folds):
        test = fold == k
        train = ~test
        if T[train].min() == T[train].max():
            raise DegeneratePropensityError(f"fold {k}: training part is all-treated or all-control")
        q_hat = factory().fit(X[train], Y[train])
        f_hat = factory().fit(X[train], T[train])
        y_res[test] = Y[test] - q_hat.predict(X[test])
        t_res[test] = T[test] - f_hat.predict(X[test])
        q_models.append(q_hat)
        f_models.append(f_hat)
    basis = np.ones((n, 1)) if constant_effect else np.hstack([np.ones((n, 1)), X])
    design = t_res[:, None] * basis
    theta, *_ = np.linalg.lstsq(design, y_res, rcond=None)
    resid = y_res - design @ theta
    bread = np.linalg.inv(design.T @ design)
    meat = (design * resid[:, None] ** 2).T @ design
    stderr = np.sqrt(np.diag(bread @ meat @ bread))
    ortho = float(np.max(np.abs((resid * t_res) @ basis / n)))
    return DoubleMLModel(theta, stderr, q_models, f_models, ortho)


def double_ml_from_dataset(dataset: LoggedDataset, regressor=None, folds: int = 2, seed: int = 0) -> DoubleMLModel:
    """Next-day verification effect of an intervention, as a linear function of the state features."""
    s = build_samples(dataset)
    return fit_double_ml(s.X, s.action, s.next_v, regressor, folds, seed)
