"""Bayesian bounds on counterfactual queries over canonical causal models."""

__version__ = "0.1.0"

from .bounds import (BaselineBound, CredibleInterval, credible_interval, frontdoor_estimate, lp_exact_bound,
                     natural_bounds, required_draws)
from .data import Dataset, EmpiricalDistribution, load_csv, parse_csv
from .estimator import CounterfactualBoundEstimator
from .exceptions import (BudgetExceededError, CtfBoundsError, CycleError, FeasibilityError,
                         InfeasibleConstraintsError, InvariantViolation, ParseError, ValidationError)
from .graph import CausalDiagram, load_diagram, make_diagram, parse_diagram
from .polyprog import PolynomialProgram, evaluate, local_solve, reduce
from .query import CtfQuery, parse_query
from .sampler import BlockedGibbs, ChainConfig, CollapsedGibbs, PosteriorRun, PriorConfig, run_chain
from .scm import CanonicalSCM, ctf_probability_enumerate, ctf_probability_mc, random_model

__all__ = [
    "BaselineBound", "BlockedGibbs", "BudgetExceededError", "CanonicalSCM", "CausalDiagram", "ChainConfig",
    "CollapsedGibbs", "CounterfactualBoundEstimator", "CredibleInterval", "CtfBoundsError", "CtfQuery",
    "CycleError", "Dataset", "EmpiricalDistribution", "FeasibilityError", "InfeasibleConstraintsError",
    "InvariantViolation", "ParseError", "PolynomialProgram", "PosteriorRun", "PriorConfig", "ValidationError",
    "credible_interval", "ctf_probability_enumerate", "ctf_probability_mc", "evaluate", "frontdoor_estimate",
    "load_csv", "load_diagram", "local_solve", "lp_exact_bound", "make_diagram", "natural_bounds", "parse_csv",
    "parse_diagram", "parse_query", "random_model", "reduce", "required_draws", "run_chain",
]
