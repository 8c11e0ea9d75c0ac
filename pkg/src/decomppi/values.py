"""Intervention values of the never-intervene policy.

For a patient in state 0 with ``M`` reward-bearing steps left, one
intervention now (and none afterwards) gains

    z(M) = tau * (1 - (1 - p - q)**M) / (p + q)

in expectation, which tends to ``tau / (p + q)`` as ``M`` grows and to
``tau * M`` when ``p + q = 0``. In state 1 the gain is zero. The closed form is
checked at test time against the exact recursion :func:`q_null_single` and by
enumerating every tape of the coupled dynamics.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInstanceError
from .model import PatientParams
from .rng import generator


def z_infinite(params: PatientParams) -> float:
    s = params.p + params.q
    if s == 0.0:
        raise DegenerateInstanceError("p + q = 0: the infinite-horizon intervention value is unbounded; use z_finite")
    return params.tau / s


def _truncated_geometric_mean(s, m):
    """sum_{k=0}^{m-1} (1-s)**k, with the s = 0 limit ``m``."""
    s = np.asarray(s, dtype=float)
    m = np.asarray(m, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        body = -np.expm1(m * np.log1p(-np.minimum(s, 1.0))) / s
    out = np.where(s > 0.0, body, m)
    return np.where(m > 0, out, 0.0)


def z_finite(params: PatientParams, remaining: float) -> float:
    """Expected gain of one intervention on a state-0 patient with ``remaining`` steps left."""
    if remaining < 1:
        raise ValueError("remaining must be >= 1")
    if math.isinf(remaining):
        return z_infinite(params)
    return float(params.tau * _truncated_geometric_mean(params.p + params.q, remaining))


def z_finite_array(p, q, tau, remaining) -> np.ndarray:
    """Vectorized :func:`z_finite`; entries with ``remaining <= 0`` are 0."""
    tau = np.asarray(tau, dtype=float)
    return tau * _truncated_geometric_mean(np.asarray(p, dtype=float) + np.asarray(q, dtype=float), remaining)


def null_values(params: PatientParams, horizon: int) -> np.ndarray:
    """``v[m, s]``: expected reward over ``m`` steps from state ``s`` under NULL."""
    v = np.zeros((horizon + 1, 2))
    p, q = params.p, params.q
    for m in range(1, horizon + 1):
        v0, v1 = v[m - 1]
        v[m, 0] = p * (1.0 + v1) + (1.0 - p) * v0
        v[m, 1] = (1.0 - q) * (1.0 + v1) + q * v0
    return v


def q_null_single(params: PatientParams, s: int, a: int, remaining: int) -> float:
    """Expected reward over ``remaining`` steps taking ``a`` now and NULL afterwards."""
    if remaining < 0:
        raise ValueError("remaining must be >= 0")
    if remaining == 0:
        return 0.0
    v = null_values(params, remaining - 1)[remaining - 1]
    if s == 0:
        up = params.p + params.tau if a else params.p
    else:
        up = 1.0 - params.q
    return float(up * (1.0 + v[1]) + (1.0 - up) * v[0])


def z_monte_carlo(params: PatientParams, remaining: int, n_samples: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of ``z_finite`` with its standard error.

    Each sample is one tape of the coupled dynamics. Only the tape's first
    ``P = 1`` and first ``Q = 1`` times after ``t`` matter, so they are drawn
    directly as geometric waiting times.
    """
    if remaining < 1 or n_samples < 1:
        raise ValueError("remaining and n_samples must be >= 1")
    p, q, tau = params.p, params.q, params.tau
    if p >= 1.0:
        rate_q = rate_k = 0.0
    else:
        rate_q, rate_k = min(q / (1.0 - p), 1.0), min(tau / (1.0 - p), 1.0)
    rng = generator(seed)
    p_now = rng.random(n_samples) < p
    k_now = rng.random(n_samples) < rate_k
    cap = np.full(n_samples, remaining, dtype=np.int64)
    wait_p = rng.geometric(p, n_samples) if p > 0 else cap
    wait_q = rng.geometric(rate_q, n_samples) if rate_q > 0 else cap
    z = (~p_now & k_now) * np.minimum(np.minimum(wait_p, wait_q), cap)
    est = float(z.mean())
    se = float(z.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return est, se
