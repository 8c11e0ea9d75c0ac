"""Budgeted selection policies.

A policy sees an :class:`Observation` at each step and returns the indices of
the patients to intervene on. Every selector returns a subset of the eligible
patients of size at most the budget; ties are broken by lowest patient index.

Policies that are a (possibly randomized) function of the system state and the
time also expose :meth:`Policy.action_distribution`, which the exact
evaluators use.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, DimensionError, PolicyNotEvaluableError
from .model import INFINITE, Instance, PatientParams
from .values import z_finite_array

# -- eligibility --------------------------------------------------------------


@dataclass(frozen=True)
class EligibilityRule:
    """Which patients may be chosen.

    ``state-zero``: active patients currently in state 0. ``streak``: active
    patients whose last ``k`` observed states are all 0. Either mode can also
    require ``warmup`` days on the platform before a patient is eligible.
    """

    mode: str = "state-zero"
    k: int = 2
    warmup: int = 0

    def __post_init__(self):
        if self.mode not in ("state-zero", "streak"):
            raise ConfigError(f"unknown eligibility mode {self.mode!r}")
        if self.k < 1 or self.warmup < 0:
            raise ConfigError("eligibility needs k >= 1 and warmup >= 0")

    @property
    def needs_history(self) -> bool:
        return self.mode == "streak"

    def mask(self, inst: Instance, state: np.ndarray, t: int, tracker=None) -> np.ndarray:
        out = inst.active(t) & (np.asarray(state) == 0) & (t >= inst.starts + self.warmup)
        if self.mode == "streak":
            if tracker is None:
                raise PolicyNotEvaluableError("streak eligibility needs the observed history")
            out &= tracker.nonverify_streak >= self.k
        return out

    def to_dict(self) -> dict:
        return {"mode": self.mode, "k": self.k, "warmup": self.warmup}

    @classmethod
    def from_dict(cls, d: dict | None) -> "EligibilityRule":
        if not d:
            return cls()
        return cls(mode=d.get("mode", "state-zero"), k=int(d.get("k", 2)), warmup=int(d.get("warmup", 0)))


STATE_ZERO = EligibilityRule()
CASE_STUDY = EligibilityRule("streak", k=2, warmup=7)


@dataclass
class Observation:
    t: int
    state: np.ndarray
    eligible: np.ndarray
    remaining: np.ndarray
    budget: int
    tracker: object | None = None
    static: np.ndarray | None = None

    def features(self) -> np.ndarray:
        if self.tracker is None:
            raise PolicyNotEvaluableError("this run does not track history features")
        hist = self.tracker.features(self.t)
        if self.static is None or self.static.shape[1] == 0:
            return hist
        return np.hstack([self.static, hist])


# -- selectors ----------------------------------------------------------------


def top_b(scores: np.ndarray, candidates: np.ndarray, budget: int, positive_only: bool = True) -> np.ndarray:
    """Indices of the ``budget`` highest-scoring candidates, lowest index on ties."""
    cand = np.flatnonzero(candidates)
    if positive_only:
        cand = cand[scores[cand] > 0]
    if budget <= 0 or cand.size == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-scores[cand], kind="stable")
    return np.sort(cand[order[:budget]])


def top_b_rows(scores: np.ndarray, candidates: np.ndarray, budget: int, positive_only: bool = True) -> np.ndarray:
    """Row-wise :func:`top_b` as a boolean ``(R, N)`` mask; ``scores`` is ``(N,)`` or ``(R, N)``."""
    candidates = np.asarray(candidates, dtype=bool)
    scores = np.broadcast_to(np.asarray(scores, dtype=float), candidates.shape)
    ok = candidates & (scores > 0) if positive_only else candidates
    order = np.argsort(-scores, axis=1, kind="stable")
    ranked = np.take_along_axis(ok, order, axis=1)
    pick = ranked & (np.cumsum(ranked, axis=1) <= budget)
    out = np.zeros_like(candidates)
    np.put_along_axis(out, order, pick, axis=1)
    return out


def _as_arrays(params: Sequence[PatientParams]):
    return (
        np.array([x.p for x in params], dtype=float),
        np.array([x.q for x in params], dtype=float),
        np.array([x.tau for x in params], dtype=float),
    )


def select_null(state, t) -> np.ndarray:
    return np.empty(0, dtype=np.int64)


def select_random_baseline(state, t, eligible, budget: int, rng: np.random.Generator) -> np.ndarray:
    idx = np.flatnonzero(eligible)
    k = min(budget, idx.size)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(idx, size=k, replace=False))


def decomp_scores(p, q, tau, remaining) -> np.ndarray:
    """Intervention values under NULL; ``remaining`` may be infinite."""
    remaining = np.asarray(remaining, dtype=float)
    if np.all(np.isinf(remaining)):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.asarray(p) + np.asarray(q)
            return np.where(s > 0, np.asarray(tau) / s, np.where(np.asarray(tau) > 0, np.inf, 0.0))
    return z_finite_array(p, q, tau, remaining)


def select_decomp_pi_oracle(state, t, eligible, budget, params: Sequence[PatientParams], horizon) -> np.ndarray:
    p, q, tau = _as_arrays(params)
    remaining = INFINITE if math.isinf(horizon) else horizon - t + 1
    z = decomp_scores(p, q, tau, np.full(len(params), remaining, dtype=float))
    return top_b(z, np.asarray(eligible) & (np.asarray(state) == 0), budget)


def select_myopic_oracle(state, t, eligible, budget, params: Sequence[PatientParams]) -> np.ndarray:
    _, _, tau = _as_arrays(params)
    return top_b(tau, np.asarray(eligible) & (np.asarray(state) == 0), budget)


# -- policy objects -----------------------------------------------------------


class Policy:
    """Base class. Subclasses override :meth:`select`."""

    kind = "policy"
    needs_history = False
    evaluable = True

    def __init__(self, label: str | None = None):
        self.label = label or self.kind
        self._rng = None

    def __repr__(self):
        return f"{type(self).__name__}({self.label!r})"

    def reset(self, inst: Instance, rng: np.random.Generator | None = None) -> None:
        self._inst = inst
        self._rng = rng

    def select(self, obs: Observation) -> np.ndarray:
        raise NotImplementedError

    def observe(self, obs: Observation, chosen: np.ndarray, next_state: np.ndarray) -> None:
        pass

    def select_batch(self, t: int, states: np.ndarray, eligible: np.ndarray, budget: int) -> np.ndarray:
        """Boolean ``(R, N)`` choices for ``R`` independent replications at step ``t``.

        Only policies that depend on the current state alone implement this.
        """
        raise PolicyNotEvaluableError(f"{self.label} has no batched selector")

    def action_distribution(self, inst: Instance, state: np.ndarray, t: int, eligible: np.ndarray):
        """List of ``(probability, chosen indices)`` pairs for exact evaluation."""
        if not self.evaluable:
            raise PolicyNotEvaluableError(f"{self.label} depends on history; use Monte Carlo")
        self.reset(inst)
        obs = Observation(t, np.asarray(state), np.asarray(eligible), inst.remaining(t), inst.budget)
        return [(1.0, tuple(int(i) for i in self.select(obs)))]


class NullPolicy(Policy):
    kind = "null"

    def select(self, obs):
        return select_null(obs.state, obs.t)

    def select_batch(self, t, states, eligible, budget):
        return np.zeros(states.shape, dtype=bool)


class RandomBaselinePolicy(Policy):
    kind = "random-baseline"

    def select(self, obs):
        if self._rng is None:
            raise ValueError("random-baseline needs an RNG; call reset(inst, rng)")
        return select_random_baseline(obs.state, obs.t, obs.eligible, obs.budget, self._rng)

    def select_batch(self, t, states, eligible, budget):
        # uniform random priorities give a uniform subset of size min(B, |eligible|)
        return top_b_rows(self._rng.random(states.shape), eligible, budget, positive_only=False)

    def action_distribution(self, inst, state, t, eligible):
        idx = np.flatnonzero(eligible)
        k = min(inst.budget, idx.size)
        if k <= 0:
            return [(1.0, ())]
        combos = list(combinations(idx.tolist(), k))
        w = 1.0 / len(combos)
        return [(w, c) for c in combos]


class IndexPolicy(Policy):
    """Top-B positive scores among eligible state-0 patients."""

    def scores(self, inst: Instance, t: int, remaining: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def select(self, obs):
        z = self.scores(self._inst, obs.t, obs.remaining)
        return top_b(z, obs.eligible & (obs.state == 0), obs.budget)

    def select_batch(self, t, states, eligible, budget):
        z = self.scores(self._inst, t, self._inst.remaining(t))
        return top_b_rows(z, eligible & (states == 0), budget)


class DecompPIOraclePolicy(IndexPolicy):
    """Ranks by the true intervention value of never intervening afterwards.

    ``infinite=True`` uses ``tau / (p + q)`` regardless of the horizon.
    ``transform`` post-processes the index (used for negative controls).
    """

    kind = "decomp-pi-oracle"

    def __init__(self, label=None, infinite: bool = False, transform: Callable | None = None):
        super().__init__(label)
        self.infinite = infinite
        self.transform = transform

    def scores(self, inst, t, remaining):
        rem = np.full(inst.n, np.inf) if self.infinite else remaining
        z = decomp_scores(inst.p, inst.q, inst.tau, rem)
        return self.transform(z) if self.transform is not None else z


class MyopicOraclePolicy(IndexPolicy):
    kind = "myopic-oracle"

    def scores(self, inst, t, remaining):
        return np.where(remaining > 0, inst.tau, 0.0)


class PerturbedIndexPolicy(IndexPolicy):
    """DecompPI with each index multiplied by fixed positive noise ``noise[i, t-1]``."""

    kind = "perturbed-index"

    def __init__(self, noise: np.ndarray, label=None):
        super().__init__(label)
        self.noise = np.asarray(noise, dtype=float)
        if np.any(self.noise <= 0):
            raise ValueError("noise multipliers must be positive")

    @classmethod
    def lognormal(cls, inst: Instance, scale: float, rng: np.random.Generator, label=None):
        return cls(np.exp(scale * rng.standard_normal((inst.n, inst.T))), label)

    def scores(self, inst, t, remaining):
        return z_finite_array(inst.p, inst.q, inst.tau, remaining) * self.noise[:, t - 1]


class OnePolicy(Policy):
    """Intervenes once, on ``patient`` at ``time``, when it is eligible."""

    kind = "one"

    def __init__(self, patient: int, time: int, label=None):
        super().__init__(label or f"one({patient},{time})")
        self.patient, self.time = patient, time

    def select(self, obs):
        if obs.t == self.time and obs.eligible[self.patient] and obs.budget >= 1:
            return np.array([self.patient])
        return np.empty(0, dtype=np.int64)

    def select_batch(self, t, states, eligible, budget):
        out = np.zeros(states.shape, dtype=bool)
        if t == self.time and budget >= 1:
            out[:, self.patient] = eligible[:, self.patient]
        return out


class EstimatedDecompPIPolicy(Policy):
    """Ranks by the regression estimate ``<theta1 - theta0, x> * remaining days``."""

    kind = "decomp-pi-estimated"
    needs_history = True
    evaluable = False

    def __init__(self, model, label=None):
        super().__init__(label)
        self.model = model

    def select(self, obs):
        x = obs.features()
        if x.shape[1] != self.model.theta0.shape[0]:
            raise DimensionError(f"model expects {self.model.theta0.shape[0]} features, got {x.shape[1]}")
        z = self.model.zhat(x, obs.remaining)
        return top_b(z, obs.eligible & (obs.state == 0), obs.budget)


# -- Thompson sampling --------------------------------------------------------


class LinearPosterior:
    """Gaussian posterior of a Bayesian linear regression in precision form."""

    def __init__(self, precision: np.ndarray, shift: np.ndarray, noise_variance: float = 1.0):
        self.precision = np.array(precision, dtype=float)
        self.shift = np.array(shift, dtype=float)
        self.noise_variance = float(noise_variance)

    @classmethod
    def from_data(cls, X, y, lam: float = 1.0, noise_variance: float = 1.0):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        prec = (X.T @ X + lam * np.eye(X.shape[1])) / noise_variance
        return cls(prec, X.T @ y / noise_variance, noise_variance)

    @property
    def dim(self) -> int:
        return self.shift.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(self.precision), self.shift)

    def sample(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        c, low = scipy.linalg.cho_factor(self.precision, lower=True)
        mean = scipy.linalg.cho_solve((c, low), self.shift)
        if scale == 0.0:
            return mean
        xi = rng.standard_normal(self.dim)
        return mean + scale * scipy.linalg.solve_triangular(c, xi, lower=True, trans="T")

    def update(self, X, y) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.precision += X.T @ X / self.noise_variance
        self.shift += X.T @ np.asarray(y, dtype=float) / self.noise_variance


@dataclass
class ThompsonLearner:
    arms: tuple[LinearPosterior, LinearPosterior]
    exploration: float = 1.0

    @property
    def dim(self) -> int:
        return self.arms[0].dim


def select_thompson_linear(features, eligible, budget, learner: ThompsonLearner, rng) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape[1] != learner.dim:
        raise DimensionError(f"learner expects {learner.dim} features, got {features.shape[1]}")
    b0 = learner.arms[0].sample(rng, learner.exploration)
    b1 = learner.arms[1].sample(rng, learner.exploration)
    return top_b(features @ (b1 - b0), np.asarray(eligible), budget, positive_only=False)


def observe_thompson(learner: ThompsonLearner, features, actions, outcomes) -> ThompsonLearner:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[1] != learner.dim:
        raise DimensionError(f"learner expects {learner.dim} features, got {features.shape[1]}")
    actions = np.asarray(actions, dtype=bool)
    outcomes = np.asarray(outcomes, dtype=float)
    for a in (0, 1):
        m = actions == bool(a)
        if m.any():
            learner.arms[a].update(features[m], outcomes[m])
    return learner


class ThompsonLinearPolicy(Policy):
    """Linear Thompson sampling on next-step outcomes, updated after every step."""

    kind = "thompson-linear"
    needs_history = True
    evaluable = False

    def __init__(self, prior: ThompsonLearner, label=None):
        super().__init__(label)
        self.prior = prior
        self.learner = copy.deepcopy(prior)

    def reset(self, inst, rng=None):
        super().reset(inst, rng)
        self.learner = copy.deepcopy(self.prior)

    def select(self, obs):
        self._x = obs.features()
        return select_thompson_linear(self._x, obs.eligible & (obs.state == 0), obs.budget, self.learner, self._rng)

    def observe(self, obs, chosen, next_state):
        m = obs.eligible & (obs.state == 0)
        if m.any():
            observe_thompson(self.learner, self._x[m], chosen[m], next_state[m])
