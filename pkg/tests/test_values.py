import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decomppi.coupling import counterfactual_z
from decomppi.errors import DegenerateInstanceError
from decomppi.model import PatientParams
from decomppi.values import null_values, q_null_single, z_finite, z_finite_array, z_infinite, z_monte_carlo

from .conftest import tape_probabilities, valid_params


def enumerated_z(pp: PatientParams, m: int) -> float:
    """E[Z] for a state-0 patient with m steps left, summing over every tape of length m."""
    law = tape_probabilities(pp)
    total = 0.0
    for cols in itertools.product(law, repeat=m):
        w = math.prod(c[1] for c in cols)
        row = tuple(np.array([c[0][j] for c in cols]) for j in range(3))
        total += w * counterfactual_z(pp, row, 1, m, 0)
    return total


def scalar_q00(p, q, m):
    """Hand-rollable NULL recursion from state 0: expected number of 1s over m steps."""
    prob1, total = 0.0, 0.0
    for _ in range(m):
        prob1 = prob1 * (1 - q) + (1 - prob1) * p
        total += prob1
    return total


def test_z_infinite_closed_form():
    assert z_infinite(PatientParams(0.2, 0.3, 0.1)) == pytest.approx(0.2)
    assert z_infinite(PatientParams(0.2, 0.3, 0.0)) == 0.0


def test_z_infinite_degenerate():
    with pytest.raises(DegenerateInstanceError):
        z_infinite(PatientParams(0.0, 0.0, 0.5))


def test_z_finite_examples():
    pp = PatientParams(0.2, 0.3, 0.1)
    assert z_finite(pp, 1) == pytest.approx(0.1, abs=1e-15)
    assert z_finite(PatientParams(0.0, 0.0, 0.25), 4) == pytest.approx(1.0, abs=1e-15)
    assert enumerated_z(PatientParams(0.0, 0.0, 0.25), 4) == pytest.approx(1.0, abs=1e-12)


def test_z_finite_converges_to_infinite_value():
    for pp in (PatientParams(0.05, 0.05, 0.3), PatientParams(0.2, 0.3, 0.1), PatientParams(0.6, 0.4, 0.4)):
        assert abs(z_finite(pp, 300) - z_infinite(pp)) <= 1e-12


def test_z_finite_rejects_zero_remaining():
    with pytest.raises(ValueError):
        z_finite(PatientParams(0.2, 0.3, 0.1), 0)


def test_z_finite_array_zero_remaining():
    out = z_finite_array([0.2, 0.2], [0.3, 0.3], [0.1, 0.1], [0, 5])
    assert out[0] == 0.0
    assert out[1] == pytest.approx(z_finite(PatientParams(0.2, 0.3, 0.1), 5))


@pytest.mark.parametrize(
    "pp", [PatientParams(0.2, 0.3, 0.1), PatientParams(0.0, 0.5, 0.9), PatientParams(0.7, 0.3, 0.3), PatientParams(1.0, 0.0, 0.0)]
)
@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_z_finite_matches_tape_enumeration(pp, m):
    assert abs(z_finite(pp, m) - enumerated_z(pp, m)) <= 1e-12


def test_q_null_single_examples():
    pp = PatientParams(0.2, 0.3, 0.1)
    assert q_null_single(pp, 0, 0, 1) == pytest.approx(0.2)
    assert q_null_single(pp, 0, 1, 1) == pytest.approx(0.3)
    assert q_null_single(pp, 1, 0, 1) == pytest.approx(0.7)
    assert q_null_single(pp, 1, 1, 1) == pytest.approx(0.7)
    assert q_null_single(pp, 0, 0, 0) == 0.0
    # three steps by hand: P(S=1) = 0.2, 0.3, 0.35
    assert q_null_single(pp, 0, 0, 3) == pytest.approx(0.85, abs=1e-15)
    assert q_null_single(pp, 0, 0, 3) == pytest.approx(scalar_q00(0.2, 0.3, 3), abs=1e-15)


@given(valid_params(), st.integers(1, 200))
def test_recursion_identity(pp, m):
    diff = q_null_single(pp, 0, 1, m) - q_null_single(pp, 0, 0, m)
    assert abs(diff - z_finite(pp, m)) <= 1e-10


@given(valid_params(), st.integers(1, 60))
def test_state_one_ignores_action(pp, m):
    assert q_null_single(pp, 1, 1, m) == q_null_single(pp, 1, 0, m)
    assert q_null_single(pp, 0, 1, m) >= q_null_single(pp, 0, 0, m) - 1e-12


@given(valid_params(), st.integers(1, 100))
def test_z_bounds_and_monotone_in_horizon(pp, m):
    z, z_next = z_finite(pp, m), z_finite(pp, m + 1)
    assert 0.0 <= z <= m + 1e-12
    assert z_next >= z - 1e-15
    if pp.p + pp.q > 0:
        assert z <= z_infinite(pp) + 1e-12


def test_z_monotone_in_parameters():
    grid = np.linspace(0.05, 0.45, 9)
    m, h = 25, 1e-4
    for p, q, tau in itertools.product(grid, grid, grid):
        base = z_finite(PatientParams(p, q, tau), m)
        assert z_finite(PatientParams(p, q, tau + h), m) > base
        assert z_finite(PatientParams(p + h, q, tau), m) < base
        assert z_finite(PatientParams(p, q + h, tau), m) < base


def test_null_values_table_matches_scalar_recursion():
    pp = PatientParams(0.15, 0.35, 0.0)
    v = null_values(pp, 12)
    for m in range(13):
        assert v[m, 0] == pytest.approx(scalar_q00(0.15, 0.35, m), abs=1e-12)


def test_monte_carlo_zero_tau():
    assert z_monte_carlo(PatientParams(0.2, 0.3, 0.0), 10, 1000, 1) == (0.0, 0.0)


@pytest.mark.parametrize("m", [1, 50])
def test_monte_carlo_agrees_with_closed_form(m):
    pp = PatientParams(0.2, 0.3, 0.1)
    est, se = z_monte_carlo(pp, m, 100_000, 3)
    assert abs(est - z_finite(pp, m)) <= 3 * se


def test_monte_carlo_deterministic():
    pp = PatientParams(0.2, 0.3, 0.1)
    assert z_monte_carlo(pp, 20, 1000, 5) == z_monte_carlo(pp, 20, 1000, 5)
