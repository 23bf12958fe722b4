"""Optimal transport from a 1D source density to a 2D target density.

A monotone finite-difference solver for the nonlocal equation satisfied by
the 1D potential: at each source point, mass balance couples the potential's
second derivative to a line integral of the target density over a level set
of the cost slope.  The package provides problem containers, the discrete
scheme, a semismooth Newton solver, benchmark problems with exact solutions,
verification utilities, and a small CLI.
"""

from .problems import (
    CostFunction,
    GridPair,
    Interval,
    InvalidProblemError,
    ProblemSpec,
    Square,
    ValidationReport,
    build_grids,
    support_mask,
    validate_problem,
)
from .scheme import (
    ContextBuildError,
    SchemeContext,
    TridiagonalMatrix,
    assemble_generalized_jacobian,
    assemble_residual,
    boundary_residual,
    build_context,
    centered_second_diff,
    hat_delta,
    interior_residual,
    monotone_delta,
    residual_entry,
)
from .solver import (
    LinearSolveError,
    SolutionVector,
    SolverConfig,
    newton_solve,
    normalize_mean_zero,
    tridiagonal_solve,
)
from .benchmarks import (
    BENCHMARK_IDS,
    MissingExactSolutionError,
    exact_error,
    make_problem,
)

__version__ = "0.1.0"

__all__ = [
    "BENCHMARK_IDS",
    "ContextBuildError",
    "CostFunction",
    "GridPair",
    "Interval",
    "InvalidProblemError",
    "LinearSolveError",
    "MissingExactSolutionError",
    "ProblemSpec",
    "SchemeContext",
    "SolutionVector",
    "SolverConfig",
    "Square",
    "TridiagonalMatrix",
    "ValidationReport",
    "assemble_generalized_jacobian",
    "assemble_residual",
    "boundary_residual",
    "build_context",
    "build_grids",
    "centered_second_diff",
    "exact_error",
    "hat_delta",
    "interior_residual",
    "make_problem",
    "monotone_delta",
    "newton_solve",
    "normalize_mean_zero",
    "residual_entry",
    "support_mask",
    "tridiagonal_solve",
    "validate_problem",
    "__version__",
]
