import itertools

import numpy as np
import pytest

from decomppi.errors import InstanceTooLargeError
from decomppi.harness import evaluate_exact
from decomppi.model import make_instance, transition_prob
from decomppi.optimal import ExactOptimalPolicy, solve_exact_optimal
from decomppi.policies import DecompPIOraclePolicy, MyopicOraclePolicy, NullPolicy, RandomBaselinePolicy


def test_one_step_examples():
    inst = make_instance([(0.2, 0.3, 0.4)], 1, 1)
    table = solve_exact_optimal(inst)
    assert table.action([0], 1) == (0,)
    assert table.value([0]) == pytest.approx(0.6, abs=1e-15)
    inst0 = make_instance([(0.2, 0.3, 0.4)], 1, 0)
    assert solve_exact_optimal(inst0).value([0]) == pytest.approx(0.2, abs=1e-15)


def test_terminal_values_are_zero():
    table = solve_exact_optimal(make_instance([(0.2, 0.3, 0.4)] * 2, 3, 1))
    assert np.all(table.values[4] == 0)
    assert table.values.shape == (5, 4)


def test_size_guard():
    with pytest.raises(InstanceTooLargeError):
        solve_exact_optimal(make_instance([(0.1, 0.1, 0.1)] * 13, 2, 1))


def step_prob(params, s, a, s_next):
    pr = 1.0
    for i, pp in enumerate(params):
        pr *= transition_prob(pp, s[i], int(i in a), s_next[i])
    return pr


def tree_value(params, s, actions1, second):
    """Expected reward of the two-step tree ``(actions1, second[s'])``."""
    states = list(itertools.product((0, 1), repeat=len(params)))
    total = 0.0
    for s1 in states:
        w1 = step_prob(params, s, actions1, s1)
        total += w1 * sum(s1)
        for s2 in states:
            total += w1 * step_prob(params, s1, second[s1], s2) * sum(s2)
    return total


def feasible(s, budget):
    zero = [i for i, x in enumerate(s) if x == 0]
    return [c for k in range(min(budget, len(zero)) + 1) for c in itertools.combinations(zero, k)]


@pytest.mark.parametrize("budget", [0, 1, 2])
def test_matches_policy_tree_enumeration(budget):
    params = [(0.1, 0.3, 0.5), (0.35, 0.15, 0.25)]
    inst = make_instance(params, 2, budget)
    table = solve_exact_optimal(inst)
    pp = inst.params
    states = list(itertools.product((0, 1), repeat=2))
    for s in states:
        best = -1.0
        for a1 in feasible(s, budget):
            options = [feasible(s1, budget) for s1 in states]
            for choice in itertools.product(*options):
                best = max(best, tree_value(pp, s, a1, dict(zip(states, choice))))
        assert table.value(list(s), 1) == pytest.approx(best, abs=1e-14)


def random_small(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    params = []
    while len(params) < n:
        p, q, tau = rng.random(3)
        if p + q <= 1 and p + tau <= 1:
            params.append((p, q, tau))
    return make_instance(params, int(rng.integers(1, 6)), int(rng.integers(0, 3)), rng.integers(0, 2, n).tolist())


@pytest.mark.parametrize("seed", range(40))
def test_opt_dominates_every_policy(seed):
    inst = random_small(seed)
    table = solve_exact_optimal(inst)
    opt = evaluate_exact(inst, ExactOptimalPolicy(table)).value
    assert opt == pytest.approx(table.value(inst.initial_states), abs=1e-12)
    for pol in (NullPolicy(), RandomBaselinePolicy(), DecompPIOraclePolicy(), MyopicOraclePolicy(),
                DecompPIOraclePolicy(infinite=True)):
        assert opt >= evaluate_exact(inst, pol).value - 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_zero_budget_equals_null(seed):
    inst = random_small(seed).with_budget(0)
    # backward and forward DPs sum in different orders; agreement is to rounding
    assert solve_exact_optimal(inst).value(inst.initial_states) == pytest.approx(
        evaluate_exact(inst, NullPolicy()).value, abs=1e-12
    )


def test_table_export_is_json():
    import json

    table = solve_exact_optimal(make_instance([(0.1, 0.2, 0.3)] * 2, 2, 1))
    d = json.loads(table.dumps())
    assert d["actions"]["1"]["0"] == list(table.action([0, 0], 1))
