"""Exact backward induction for small systems.

System states are bitmasks: patient ``i`` is in state 1 iff bit ``i`` is set.
Given per-patient probabilities ``u`` of being in state 1 next step, the next
system state is a product distribution over the ``2**N`` masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import InstanceTooLargeError, PolicyNotEvaluableError
from .model import Instance, require_valid
from .policies import STATE_ZERO, EligibilityRule, Policy

DEFAULT_CAP = 12


@lru_cache(maxsize=None)
def state_bits(n: int) -> np.ndarray:
    """``(2**n, n)`` array; row ``s`` holds the bits of mask ``s``."""
    s = np.arange(2**n)
    bits = (s[:, None] >> np.arange(n)) & 1
    bits.flags.writeable = False
    return bits


def mask_of(state) -> int:
    return int(sum(int(b) << i for i, b in enumerate(state)))


def up_probabilities(inst: Instance, state: np.ndarray, chosen, active: np.ndarray) -> np.ndarray:
    """Probability that each patient is in state 1 after one step."""
    u = np.where(state == 1, 1.0 - inst.q, inst.p)
    idx = np.asarray(chosen, dtype=np.int64)
    if idx.size:
        u[idx] = np.where(state[idx] == 0, inst.p[idx] + inst.tau[idx], u[idx])
    return np.where(active, u, state.astype(float))


def next_state_dists(U: np.ndarray) -> np.ndarray:
    """Rows of ``U`` (per-patient up-probabilities) to distributions over masks."""
    U = np.atleast_2d(U)
    D = np.ones((U.shape[0], 1))
    for i in range(U.shape[1] - 1, -1, -1):
        pair = np.stack([1.0 - U[:, i], U[:, i]], axis=1)
        D = (D[:, :, None] * pair[:, None, :]).reshape(U.shape[0], -1)
    return D


def check_size(inst: Instance, cap: int) -> None:
    if inst.n > cap:
        raise InstanceTooLargeError(f"N={inst.n} exceeds the exact-DP cap of {cap}")


def feasible_actions(eligible: np.ndarray, budget: int) -> list[tuple[int, ...]]:
    idx = np.flatnonzero(eligible).tolist()
    out = []
    for k in range(min(budget, len(idx)) + 1):
        out.extend(combinations(idx, k))
    return out


@dataclass
class OptimalPolicyTable:
    """``actions[t][mask]`` and ``values[t][mask]`` for ``t = 1..T+1`` (index 0 unused)."""

    n: int
    horizon: int
    actions: list
    values: np.ndarray  # (T + 2, 2**n)

    def value(self, state, t: int = 1) -> float:
        return float(self.values[t, mask_of(state)])

    def action(self, state, t: int) -> tuple[int, ...]:
        return self.actions[t][mask_of(state)]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "T": self.horizon,
            "actions": {str(t): {str(s): list(a) for s, a in enumerate(self.actions[t])} for t in range(1, self.horizon + 1)},
            "values": {str(t): self.values[t].tolist() for t in range(1, self.horizon + 2)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def solve_exact_optimal(
    inst: Instance, eligibility: EligibilityRule = STATE_ZERO, cap: int = DEFAULT_CAP, tol: float = 1e-12
) -> OptimalPolicyTable:
    """Backward induction over all system states and budget-feasible action sets.

    Among near-ties (within ``tol``) the first enumerated action wins: smaller
    sets first, then lexicographic order.
    """
    require_valid(inst)
    check_size(inst, cap)
    if eligibility.needs_history:
        raise PolicyNotEvaluableError("exact DP supports only state-based eligibility")
    n, T = inst.n, inst.T
    bits = state_bits(n)
    values = np.zeros((T + 2, 2**n))
    actions: list = [None] * (T + 2)
    for t in range(T, 0, -1):
        active = inst.active(t)
        future = values[t + 1]
        row_a = []
        for s in range(2**n):
            b = bits[s]
            acts = feasible_actions(eligibility.mask(inst, b, t), inst.budget)
            U = np.array([up_probabilities(inst, b, a, active) for a in acts])
            q = (U * active).sum(axis=1) + next_state_dists(U) @ future
            best = 0
            for j in range(1, len(acts)):
                if q[j] > q[best] + tol:
                    best = j
            values[t, s] = q[best]
            row_a.append(tuple(acts[best]))
        actions[t] = row_a
    return OptimalPolicyTable(n, T, actions, values)


class ExactOptimalPolicy(Policy):
    kind = "exact-optimal"

    def __init__(self, table: OptimalPolicyTable | None = None, label=None, eligibility: EligibilityRule = STATE_ZERO):
        super().__init__(label)
        self.table = table
        self.eligibility = eligibility
        self._solved_for = None

    def reset(self, inst, rng=None):
        super().reset(inst, rng)
        if self.table is None or (self._solved_for is not None and self._solved_for != inst):
            self.table = solve_exact_optimal(inst, self.eligibility)
            self._solved_for = inst

    def select(self, obs):
        return np.array(self.table.action(obs.state, obs.t), dtype=np.int64)

    def select_batch(self, t, states, eligible, budget):
        n = states.shape[1]
        lookup = np.zeros((2**n, n), dtype=bool)
        for mask, act in enumerate(self.table.actions[t]):
            lookup[mask, list(act)] = True
        return lookup[states.astype(np.int64) @ (1 << np.arange(n))]

    def action_distribution(self, inst, state, t, eligible):
        self.reset(inst)
        return [(1.0, self.table.action(state, t))]
