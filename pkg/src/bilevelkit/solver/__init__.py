"""Bundled exact solvers: simplex LP kernel, active-set convex QP,
branch-and-bound over complementarity pairs, SOS1 sets, indicators and
binaries."""

from .bnb import (
    SolveOptions,
    SolveResult,
    SolveStatus,
    UnsupportedProblemError,
    check_bigm_tightness,
    compute_gap,
    solve_bnb,
)
from .lp import CompiledLp, LpBuilder, LpResult, LpStatus, SolverFailure
from .qp import (
    ConvexSubproblem,
    NotConvexError,
    QpResult,
    QpStatus,
    solve_convex,
)

__all__ = [
    "CompiledLp",
    "ConvexSubproblem",
    "LpBuilder",
    "LpResult",
    "LpStatus",
    "NotConvexError",
    "QpResult",
    "QpStatus",
    "SolveOptions",
    "SolveResult",
    "SolveStatus",
    "SolverFailure",
    "UnsupportedProblemError",
    "check_bigm_tightness",
    "compute_gap",
    "solve_bnb",
    "solve_convex",
]
