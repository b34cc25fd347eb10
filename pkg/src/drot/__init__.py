"""Dual regularized optimal transport solved with Project and Forget."""

from .core import (
    DualPotentials,
    ProblemError,
    ProblemInstance,
    SolveResult,
    SolverConfig,
    SweepStats,
    TransportPlan,
    gaussian_instance,
    make_problem,
    random_simplex_instance,
    sqeuclidean_cost,
)
from .regularizers import DomainError, RegularizerSpec, ThetaError
from .solver import feasibility_error, initialize, oracle_scan, project_constraint, solve

__version__ = "0.1.0"
