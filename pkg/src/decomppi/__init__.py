"""Budgeted interventions on two-state patient chains, ranked by intervention value."""

from .coupling import BernoulliTape, Trajectory, coupled_compare, coupled_step, counterfactual_z, draw_tape, run_on_tape
from .errors import (
    ConfigError,
    DecompPIError,
    DegenerateInstanceError,
    EmptyArmError,
    InstanceTooLargeError,
    InvalidInstanceError,
    PolicyNotEvaluableError,
)
from .model import Instance, PatientParams, load_instance, make_instance, validate_instance
from .optimal import ExactOptimalPolicy, solve_exact_optimal
from .policies import (
    CASE_STUDY,
    STATE_ZERO,
    DecompPIOraclePolicy,
    EligibilityRule,
    EstimatedDecompPIPolicy,
    MyopicOraclePolicy,
    NullPolicy,
    RandomBaselinePolicy,
    ThompsonLinearPolicy,
)
from .values import null_values, q_null_single, z_finite, z_infinite, z_monte_carlo

__version__ = "0.1.0"
