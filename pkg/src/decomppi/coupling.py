"""Coupled sample paths.

All policies are driven by one tape of Bernoulli draws per (patient, step):
``P ~ Bern(p)``, ``Q ~ Bern(q / (1 - p))`` and ``K ~ Bern(tau / (1 - p))``
(``Q`` and ``K`` are 0 when ``p = 1``). A step applies, in order:

1. patients in state 1 with ``Q = 1`` return to state 0;
2. patients now in state 0 with ``P = 1`` move to state 1;
3. chosen patients still in state 0 with ``K = 1`` move to state 1.

Marginally this is the original two-state kernel, and on a shared tape the
never-intervene path is dominated by every other policy's path.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PolicyNotEvaluableError
from .model import Instance, PatientParams, require_valid
from .offline.features import HistoryTracker
from .policies import STATE_ZERO, EligibilityRule, Observation, Policy
from .rng import POLICY, TAPE_K, TAPE_P, TAPE_Q, generator, label_key

log = logging.getLogger(__name__)


def tape_rates(p, q, tau):
    p = np.asarray(p, dtype=float)
    denom = np.where(p < 1.0, 1.0 - p, 1.0)
    rq = np.where(p < 1.0, np.minimum(np.asarray(q, dtype=float) / denom, 1.0), 0.0)
    rk = np.where(p < 1.0, np.minimum(np.asarray(tau, dtype=float) / denom, 1.0), 0.0)
    return p, rq, rk


@dataclass(frozen=True)
class BernoulliTape:
    """Binary ``(N, T)`` arrays ``P``, ``Q``, ``K``; column ``t - 1`` belongs to step ``t``."""

    P: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    seed: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.P.shape

    def column(self, t: int):
        return self.P[:, t - 1], self.Q[:, t - 1], self.K[:, t - 1]

    def row(self, i: int):
        return self.P[i], self.Q[i], self.K[i]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "shape": list(self.shape),
            "P": self.P.astype(int).tolist(),
            "Q": self.Q.astype(int).tolist(),
            "K": self.K.astype(int).tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "BernoulliTape":
        arr = {k: np.asarray(d[k], dtype=bool) for k in ("P", "Q", "K")}
        return cls(arr["P"], arr["Q"], arr["K"], d.get("seed"))


def draw_tape(inst: Instance, seed: int) -> BernoulliTape:
    """Tape for ``inst``; each stream comes from its own keyed sub-generator."""
    require_valid(inst)
    n, T = inst.n, inst.T
    p, rq, rk = tape_rates(inst.p, inst.q, inst.tau)
    P = generator(seed, TAPE_P).random((n, T)) < p[:, None]
    Q = generator(seed, TAPE_Q).random((n, T)) < rq[:, None]
    K = generator(seed, TAPE_K).random((n, T)) < rk[:, None]
    return BernoulliTape(P, Q, K, seed)


def coupled_step(inst: Instance, state, action, tape_col, active=None) -> np.ndarray:
    """Next system state from ``state``, chosen indices ``action`` and one tape column."""
    state = np.asarray(state)
    P, Q, K = (np.asarray(x, dtype=bool) for x in tape_col)
    if not (state.shape[0] == inst.n == P.shape[0] == Q.shape[0] == K.shape[0]):
        raise DimensionError(f"state {state.shape[0]}, tape {P.shape[0]} and instance {inst.n} disagree")
    chosen = np.zeros(inst.n, dtype=bool)
    chosen[np.asarray(action, dtype=np.int64)] = True
    if np.any(chosen & (state == 1)):
        log.warning("dropping interventions on patients already in state 1: %s", np.flatnonzero(chosen & (state == 1)))
        chosen &= state == 0
    one = state == 1
    one &= ~Q  # (i) return to state 0
    one |= P  # (ii) passive transitions to state 1
    one |= chosen & K  # (iii) active transitions to state 1
    nxt = one.astype(state.dtype)
    if active is not None:
        nxt = np.where(active, nxt, state)
    return nxt


def counterfactual_z(params: PatientParams, tape_row, t: int, T: int, null_state_at_t: int) -> int:
    """Extra reward steps earned by one intervention at ``t`` on this tape.

    Counts the states ``S[t+1..T+1]`` at which the once-intervened path is 1
    while the never-intervene path is 0.
    """
    P, Q, K = (np.asarray(x, dtype=bool) for x in tape_row)
    if null_state_at_t != 0 or P[t - 1] or not K[t - 1]:
        return 0
    cap = T - t + 1
    later_p = np.flatnonzero(P[t:T])
    later_q = np.flatnonzero(Q[t:T])
    wait_p = int(later_p[0]) + 1 if later_p.size else cap
    wait_q = int(later_q[0]) + 1 if later_q.size else cap
    return min(wait_p, wait_q, cap)


def counterfactual_z_all(tape: BernoulliTape, t: int, T: int, null_state_at_t) -> np.ndarray:
    """Vectorized :func:`counterfactual_z` over every tape row."""
    P, Q, K = tape.P, tape.Q, tape.K
    cap = T - t + 1
    hit = np.concatenate([P[:, t:T] | Q[:, t:T], np.ones((P.shape[0], 1), dtype=bool)], axis=1)
    wait = np.argmax(hit, axis=1) + 1
    fires = (np.asarray(null_state_at_t) == 0) & ~P[:, t - 1] & K[:, t - 1]
    return np.where(fires, np.minimum(wait, cap), 0)


@dataclass
class Trajectory:
    """States ``(T+1, N)`` (row 0 is the initial state), actions ``(T, N)`` and per-step rewards."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    active_steps: int
    label: str = ""

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @property
    def verification_rate(self) -> float:
        return self.total_reward / self.active_steps if self.active_steps else 0.0

    def chosen(self):
        """``(patient, step)`` pairs of every intervention."""
        ts, ii = np.nonzero(self.actions)
        return ii, ts + 1


def policy_rng(seed: int, policy: Policy) -> np.random.Generator:
    return generator(seed, POLICY, label_key(policy.label))


def run_on_tape(
    inst: Instance,
    policy: Policy,
    tape: BernoulliTape,
    eligibility: EligibilityRule = STATE_ZERO,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Run one policy over the whole horizon on a fixed tape."""
    n, T = inst.n, inst.T
    if tape.shape != (n, T):
        raise DimensionError(f"tape shape {tape.shape} != ({n}, {T})")
    S = np.empty((T + 1, n), dtype=np.int8)
    S[0] = inst.initial_states
    A = np.zeros((T, n), dtype=bool)
    rewards = np.zeros(T, dtype=np.int64)
    track = policy.needs_history or eligibility.needs_history
    tracker = HistoryTracker(inst.starts, inst.ends) if track else None
    static = inst.static_matrix() if track else None
    policy.reset(inst, rng)
    for t in range(1, T + 1):
        state = S[t - 1]
        if tracker is not None:
            tracker.observe(t, state, A[t - 2] if t >= 2 else None)
        active = inst.active(t)
        eligible = eligibility.mask(inst, state, t, tracker)
        obs = Observation(t, state, eligible, np.where(active, inst.ends - t, 0), inst.budget, tracker, static)
        chosen = np.asarray(policy.select(obs), dtype=np.int64)
        if chosen.size > inst.budget or not np.all(eligible[chosen]) or np.unique(chosen).size != chosen.size:
            raise RuntimeError(f"{policy.label} chose {chosen.tolist()} at t={t}: not a budget-feasible eligible set")
        A[t - 1, chosen] = True
        nxt = coupled_step(inst, state, chosen, tape.column(t), active)
        S[t] = nxt
        rewards[t - 1] = int(nxt[active].sum())
        policy.observe(obs, A[t - 1], nxt)
    return Trajectory(S, A, rewards, inst.active_steps, policy.label)


def stack_tapes(tapes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(R, N, T)`` arrays from ``R`` tapes of equal shape."""
    return tuple(np.stack([getattr(tp, k) for tp in tapes]) for k in ("P", "Q", "K"))


@dataclass
class BatchRun:
    """States ``(R, T+1, N)``, actions ``(R, T, N)`` and rewards ``(R, T)`` of ``R`` replications."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def run_batch(
    inst: Instance,
    policy: Policy,
    tapes,
    eligibility: EligibilityRule = STATE_ZERO,
    rng: np.random.Generator | None = None,
) -> BatchRun:
    """Run a state-based policy on many tapes at once.

    ``tapes`` is a list of tapes or a ``(P, Q, K)`` triple of ``(R, N, T)``
    arrays. Replication ``r`` follows exactly the path :func:`run_on_tape`
    gives on tape ``r`` for deterministic policies; randomized ones draw
    from ``rng`` in a different order.
    """
    if policy.needs_history or eligibility.needs_history:
        raise PolicyNotEvaluableError(f"{policy.label}: batched runs need state-based policies and eligibility")
    P, Q, K = stack_tapes(tapes) if not isinstance(tapes, tuple) else tapes
    R, n, T = P.shape
    if (n, T) != (inst.n, inst.T):
        raise DimensionError(f"tape shape {(n, T)} != ({inst.n}, {inst.T})")
    S = np.empty((R, T + 1, n), dtype=np.int8)
    S[:, 0] = inst.initial_states
    A = np.zeros((R, T, n), dtype=bool)
    rewards = np.zeros((R, T), dtype=np.int64)
    policy.reset(inst, rng)
    for t in range(1, T + 1):
        state = S[:, t - 1]
        active = inst.active(t)
        eligible = eligibility.mask(inst, state, t)
        chosen = policy.select_batch(t, state, eligible, inst.budget)
        if np.any(chosen & ~eligible) or np.any(chosen.sum(axis=1) > inst.budget):
            raise RuntimeError(f"{policy.label} chose an infeasible set at t={t}")
        A[:, t - 1] = chosen
        one = state == 1
        one &= ~Q[:, :, t - 1]
        one |= P[:, :, t - 1]
        one |= chosen & K[:, :, t - 1]
        S[:, t] = np.where(active, one, state)
        rewards[:, t - 1] = S[:, t][:, active].sum(axis=1)
    return BatchRun(S, A, rewards)


@dataclass
class CoupledRunResult:
    tape: BernoulliTape
    trajectories: list[Trajectory] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [tr.total_reward for tr in self.trajectories]


def coupled_compare(
    inst: Instance,
    policies: list[Policy],
    seed: int,
    eligibility: EligibilityRule = STATE_ZERO,
    tape: BernoulliTape | None = None,
) -> CoupledRunResult:
    """Run every policy on the tape drawn from ``seed``.

    Policy randomness comes from streams keyed by each policy's label, so
    adding or reordering policies changes neither the tape nor the others' runs.
    """
    tape = draw_tape(inst, seed) if tape is None else tape
    out = CoupledRunResult(tape)
    for pol in policies:
        out.trajectories.append(run_on_tape(inst, pol, tape, eligibility, policy_rng(seed, pol)))
    return out
