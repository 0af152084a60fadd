"""Discrete monotone-follower problems on finite scenario trees.

Solve capped and uncapped problems, certify optimizers through the discrete
Pontryagin system, derive the equivalent stopping problem, and measure how
Lipschitz optimizers approach singular ones in the pseudopath metric.
"""
from .admissibility import (JointLaw, RandomizedModel, check_conditional_independence,
                            couple_conditionally_independent, coupled_gap_bound, optional_project)
from .costs import (ControlPlan, CostSpec, audit_spec, enumerate_expected_cost, expected_cost,
                    make_spec, pathwise_cost, quadratic_spec, subgradient_process)
from .errors import (ConfigError, DimensionError, EvaluationError, InfeasiblePlanError,
                     MarginalMismatchError, MonotoneFollowerError, TreeError, UncertifiedPlanError)
from .lattice import (AdaptedProcess, ScenarioTree, TimeGrid, build_binomial_tree,
                      build_lottery_tree, build_random_tree, build_ray_tree,
                      conditional_expectation)
from .meyer_zheng import (conditional_variation, findim_marginal_distance, pseudopath_distance,
                          tightness_certificate)
from .pontryagin import certify, compute_adjoint, optimality_gap_bound
from .solver import (CoercivityUnverified, SolveOptions, run_ladder, solve_capped,
                     solve_uncapped)
from .stopping import equivalence_check, snell_min

__version__ = "0.1.0"

__all__ = [
    "AdaptedProcess", "CoercivityUnverified", "ConfigError", "ControlPlan", "CostSpec",
    "DimensionError", "EvaluationError", "InfeasiblePlanError", "JointLaw",
    "MarginalMismatchError", "MonotoneFollowerError", "RandomizedModel", "ScenarioTree",
    "SolveOptions", "TimeGrid", "TreeError", "UncertifiedPlanError", "audit_spec",
    "build_binomial_tree", "build_lottery_tree", "build_random_tree", "build_ray_tree",
    "certify", "check_conditional_independence", "compute_adjoint", "conditional_expectation",
    "conditional_variation", "couple_conditionally_independent", "coupled_gap_bound",
    "enumerate_expected_cost", "equivalence_check", "expected_cost", "findim_marginal_distance",
    "make_spec", "optimality_gap_bound", "optional_project", "pathwise_cost",
    "pseudopath_distance", "quadratic_spec", "run_ladder", "snell_min", "solve_capped",
    "solve_uncapped", "subgradient_process", "tightness_certificate",
]
