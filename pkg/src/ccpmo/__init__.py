"""Chance-constrained optimization over probability measures via two-point mixtures."""

from .baselines import UnsupportedProblemError, saa_grid_solve, scenario_solve
from .nlp import NlpProblem, SolveResult, SolverConfig, minimize
from .problem import (
    DecisionDomain,
    Normal,
    PointMass,
    ProblemError,
    ProblemInstance,
    ScaledBeta,
    UncertaintyModel,
    builtin,
    load_problem,
    problem_from_config,
    true_probability,
)
from .smoothing import SMOOTHING_ID, SampleSet, SmoothingParams, empirical_prob, smooth_prob, smooth_prob_grad
from .solver import (
    Frontier,
    InfeasibleError,
    PolicyReport,
    SPointPolicy,
    TwoPointPolicy,
    build_frontier,
    mix_from_frontier,
    policy_from_dict,
    solve_deterministic,
    solve_s_point,
    solve_two_point,
)
from .validate import ValidationReport, grid_two_point_oracle, monte_carlo_validate

__version__ = "0.1.0"

__all__ = [
    "DecisionDomain",
    "Frontier",
    "InfeasibleError",
    "NlpProblem",
    "Normal",
    "PointMass",
    "PolicyReport",
    "ProblemError",
    "ProblemInstance",
    "SMOOTHING_ID",
    "SPointPolicy",
    "SampleSet",
    "ScaledBeta",
    "SmoothingParams",
    "SolveResult",
    "SolverConfig",
    "TwoPointPolicy",
    "UncertaintyModel",
    "UnsupportedProblemError",
    "ValidationReport",
    "build_frontier",
    "builtin",
    "empirical_prob",
    "grid_two_point_oracle",
    "load_problem",
    "minimize",
    "mix_from_frontier",
    "monte_carlo_validate",
    "policy_from_dict",
    "problem_from_config",
    "saa_grid_solve",
    "scenario_solve",
    "smooth_prob",
    "smooth_prob_grad",
    "solve_deterministic",
    "solve_s_point",
    "solve_two_point",
    "true_probability",
]
