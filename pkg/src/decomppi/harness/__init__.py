"""Simulation, exact evaluation, theorem checks and budget sweeps."""

from .checks import (
    FAULTS,
    SUITES,
    BoundsReport,
    Prop3Report,
    RobustnessReport,
    SuiteReport,
    check_prop3_identity,
    check_robustness,
    check_theorem_bounds,
    run_suite,
)
from .evaluation import ExactEvaluation, evaluate_exact, evaluate_null_decomposed, simulate
from .sweep import (
    EvaluationResult,
    ExperimentConfig,
    budget_sweep,
    build_policy,
    summary_csv,
    targeted_csv,
    targeted_patient_stats,
    thompson_prior,
    validate_config,
)

__all__ = [
    "FAULTS",
    "SUITES",
    "BoundsReport",
    "EvaluationResult",
    "ExactEvaluation",
    "ExperimentConfig",
    "Prop3Report",
    "RobustnessReport",
    "SuiteReport",
    "budget_sweep",
    "build_policy",
    "check_prop3_identity",
    "check_robustness",
    "check_theorem_bounds",
    "evaluate_exact",
    "evaluate_null_decomposed",
    "run_suite",
    "simulate",
    "summary_csv",
    "targeted_csv",
    "targeted_patient_stats",
    "thompson_prior",
    "validate_config",
]
