"""Conic optimization substrate: program container, continuous backend, and
mixed-integer branch-and-bound."""

from .backend import solve_continuous
from .branch_bound import WarmStart, solve_misocp
from .program import (
    INF,
    ConicProgram,
    ProgramError,
    Solution,
    SolveStatus,
    SolveTolerances,
    add_terms,
    const_expr,
    lin,
    scale_term,
    soc_tightness,
    term,
)

__all__ = [
    "INF",
    "ConicProgram",
    "ProgramError",
    "Solution",
    "SolveStatus",
    "SolveTolerances",
    "WarmStart",
    "add_terms",
    "const_expr",
    "lin",
    "scale_term",
    "soc_tightness",
    "solve_continuous",
    "solve_misocp",
    "term",
]
