"""Simulation and exact policy evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..coupling import Trajectory, draw_tape, policy_rng, run_on_tape
from ..errors import PolicyNotEvaluableError
from ..model import Instance, require_valid
from ..optimal import DEFAULT_CAP, check_size, next_state_dists, state_bits, up_probabilities
from ..policies import STATE_ZERO, EligibilityRule, Policy, top_b
from ..values import z_finite_array


def simulate(inst: Instance, policy: Policy, eligibility: EligibilityRule = STATE_ZERO, seed: int = 0) -> Trajectory:
    """One run on the tape drawn from ``seed``."""
    require_valid(inst)
    return run_on_tape(inst, policy, draw_tape(inst, seed), eligibility, policy_rng(seed, policy))


@dataclass(frozen=True)
class ExactEvaluation:
    """Expected totals from the forward DP.

    ``chosen_z``: expected sum of intervention values of the chosen patients.
    ``decomp_z``: expected sum of intervention values of the patients
    DecompPI would choose out of this policy's state-0 patients.
    """

    value: float
    chosen_z: float
    decomp_z: float


def evaluate_exact(
    inst: Instance, policy: Policy, eligibility: EligibilityRule = STATE_ZERO, cap: int = DEFAULT_CAP
) -> ExactEvaluation:
    """Forward DP over the ``2**N`` state distribution."""
    require_valid(inst)
    check_size(inst, cap)
    if not policy.evaluable or eligibility.needs_history:
        raise PolicyNotEvaluableError(f"{policy.label} cannot be evaluated exactly; use simulation")
    n = inst.n
    bits = state_bits(n)
    mu = np.zeros(2**n)
    mu[int(sum(s << i for i, s in enumerate(inst.initial_states)))] = 1.0
    value = chosen_z = decomp_z = 0.0
    for t in range(1, inst.T + 1):
        active = inst.active(t)
        z = z_finite_array(inst.p, inst.q, inst.tau, inst.remaining(t))
        nxt = np.zeros_like(mu)
        for s in np.flatnonzero(mu > 0):
            w = mu[s]
            b = bits[s]
            eligible = eligibility.mask(inst, b, t)
            decomp_z += w * z[top_b(z, eligible & (b == 0), inst.budget)].sum()
            dist = policy.action_distribution(inst, b, t, eligible)
            U = np.array([up_probabilities(inst, b, a, active) for _, a in dist])
            probs = np.array([pr for pr, _ in dist])
            value += w * probs @ (U * active).sum(axis=1)
            chosen_z += w * sum(pr * z[list(a)].sum() for pr, a in dist)
            nxt += w * (probs @ next_state_dists(U))
        mu = nxt
    return ExactEvaluation(float(value), float(chosen_z), float(decomp_z))


def evaluate_null_decomposed(inst: Instance) -> float:
    """NULL's expected reward as a sum of independent per-patient values."""
    from ..values import q_null_single

    total = 0.0
    for i, pp in enumerate(inst.params):
        m = int(inst.ends[i] - inst.starts[i])
        total += q_null_single(pp, inst.initial_states[i], 0, m)
    return total
