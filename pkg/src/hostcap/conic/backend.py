"""Continuous conic solves via the bundled Clarabel interior-point backend.

The program is compiled once into Clarabel's standard form
``min q'x  s.t.  Ax + s = b,  s in K`` with K a product of zero, nonnegative,
and second-order cones.  Rotated cones are rewritten as standard cones via
``u*w >= ||z||^2  <=>  ||(u-w, 2z)|| <= u+w``.  Variable bounds become
nonnegative-cone rows so that branch-and-bound can retighten them by editing
the right-hand side only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import clarabel
import numpy as np
from scipy import sparse

from .program import (
    INF,
    ConicProgram,
    ProgramError,
    Solution,
    SolveStatus,
    SolveTolerances,
)


@dataclass
class _Compiled:
    A: sparse.csc_matrix
    b: np.ndarray
    q: np.ndarray
    cones: list
    n: int
    # b indices of the bound rows per variable (-1 when absent)
    ub_row: np.ndarray
    lb_row: np.ndarray
    obj_const: float


def compile_program(prog: ConicProgram) -> _Compiled:
    """Translate a finalized program into Clarabel standard form."""
    prog.finalize()
    n = prog.num_vars
    rows_i: list[int] = []
    cols_i: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    cones: list = []
    row = 0

    def put(ids, coefs, rhs):
        nonlocal row
        for i, a in zip(np.asarray(ids).tolist(), np.asarray(coefs).tolist()):
            rows_i.append(row)
            cols_i.append(int(i))
            vals.append(float(a))
        b.append(float(rhs))
        row += 1

    # continuous variables pinned to a (near-)degenerate interval compile to
    # equalities; paired tight inequalities stall the interior point method
    fixed_val: dict[int, float] = {}
    for i in range(n):
        lo, hi = prog.lb[i], prog.ub[i]
        if (not prog.binary[i] and lo > -INF and hi < INF
                and hi - lo <= 1e-8 * max(1.0, abs(lo), abs(hi))):
            fixed_val[i] = 0.5 * (lo + hi)

    # equalities -> zero cone
    n_eq = 0
    for r in prog.lin_rows:
        if r.sense == "==":
            put(r.ids, r.coefs, r.rhs)
            n_eq += 1
    for i, val in fixed_val.items():
        put([i], [1.0], val)
        n_eq += 1
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))

    # inequalities and bounds -> nonnegative cone (a x <= b becomes a x + s = b)
    n_in = 0
    for r in prog.lin_rows:
        if r.sense == "<=":
            put(r.ids, r.coefs, r.rhs)
            n_in += 1
    ub_row = np.full(n, -1, dtype=np.int64)
    lb_row = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if i in fixed_val:
            continue
        # binaries always get both rows so node fixings stay rhs-only edits
        if prog.ub[i] < INF or prog.binary[i]:
            ub_row[i] = row
            put([i], [1.0], prog.ub[i] if prog.ub[i] < INF else 1.0)
            n_in += 1
        if prog.lb[i] > -INF or prog.binary[i]:
            lb_row[i] = row
            put([i], [-1.0], -prog.lb[i] if prog.lb[i] > -INF else 0.0)
            n_in += 1
    if n_in:
        cones.append(clarabel.NonnegativeConeT(n_in))

    # second-order cones: s = (head; rows) with A-part negated
    for cone in prog.soc_cones:
        h_ids, h_coefs, h_c = cone.head
        put(h_ids, -h_coefs, h_c)
        for e in cone.rows:
            put(e[0], -e[1], e[2])
        cones.append(clarabel.SecondOrderConeT(len(cone.rows) + 1))

    # rotated cones -> standard: ||(u-w, 2z)|| <= u+w
    for cone in prog.rotated_cones:
        if isinstance(cone.w, int):
            put([cone.u, cone.w], [-1.0, -1.0], 0.0)        # head u+w
            put([cone.u, cone.w], [-1.0, 1.0], 0.0)         # u-w
        else:
            put([cone.u], [-1.0], cone.w)                   # head u+const
            put([cone.u], [-1.0], -cone.w)                  # u-const
        for e in cone.z:
            put(e[0], -2.0 * e[1], 2.0 * e[2])
        cones.append(clarabel.SecondOrderConeT(len(cone.z) + 2))

    A = sparse.coo_matrix((vals, (rows_i, cols_i)), shape=(row, n)).tocsc()
    q = np.zeros(n)
    for i, a in prog.obj_lin.items():
        q[i] += a
    return _Compiled(A, np.asarray(b), q, cones, n, ub_row, lb_row, prog.obj_const)


_SOLVED = {"Solved"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}
_UNBOUNDED = {"DualInfeasible", "AlmostDualInfeasible"}


def solve_compiled(comp: _Compiled, prog: ConicProgram,
                   tol: SolveTolerances | None = None,
                   bounds_override: dict[int, tuple[float, float]] | None = None,
                   verbose: bool = False) -> Solution:
    tol = tol or SolveTolerances()
    b = comp.b.copy()
    if bounds_override:
        for i, (lo, hi) in bounds_override.items():
            if comp.ub_row[i] < 0 or comp.lb_row[i] < 0:
                raise ProgramError(
                    f"variable {prog.var_names[i]} has no bound rows to override")
            b[comp.ub_row[i]] = hi
            b[comp.lb_row[i]] = -lo

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    # push well past the acceptance thresholds; stalls short of these targets
    # are still accepted below whenever the iterate meets the contract
    settings.tol_feas = min(1e-11, tol.feas_tol * 1e-2)
    settings.tol_gap_rel = min(1e-11, tol.opt_tol * 1e-2)
    settings.tol_gap_abs = 1e-12
    settings.reduced_tol_feas = 1e-9
    settings.reduced_tol_gap_rel = 1e-9
    settings.reduced_tol_gap_abs = 1e-10
    P = sparse.csc_matrix((comp.n, comp.n))
    t0 = time.perf_counter()
    raw = clarabel.DefaultSolver(P, comp.q, comp.A, b, comp.cones, settings).solve()
    wall = time.perf_counter() - t0
    status_name = str(raw.status)
    stats = {"iterations": raw.iterations, "wall_time": wall, "solver_status": status_name}

    if status_name in _INFEASIBLE:
        cert = np.asarray(raw.z) if raw.z is not None else None
        return Solution(SolveStatus.INFEASIBLE, None, None, stats, certificate=cert)
    if status_name in _UNBOUNDED:
        ray = np.asarray(raw.x) if raw.x is not None else None
        return Solution(SolveStatus.UNBOUNDED, None, None, stats, certificate=ray)

    x = np.asarray(raw.x)
    obj = float(comp.q @ x) + comp.obj_const
    residual = prog.max_residual(x, bounds_override)
    dual = float(raw.obj_val_dual) + comp.obj_const
    rel_gap = abs(obj - dual) / max(1.0, abs(obj))
    stats["duality_gap"] = rel_gap
    # weak duality sanity: a dual value above the primal beyond tolerance means
    # the iterate cannot be trusted as optimal
    weak_ok = dual <= obj + tol.opt_tol * max(1.0, abs(obj)) + 1e-9
    if residual <= tol.feas_tol and rel_gap <= max(tol.opt_tol, 1e-8) and weak_ok:
        return Solution(SolveStatus.OPTIMAL, x, obj, stats, residual=residual)
    # solver stopped early or met its own tolerances but not ours: report the
    # best iterate rather than a silent wrong answer
    return Solution(SolveStatus.ITERATION_LIMIT, x, obj, stats, residual=residual)


def solve_continuous(prog: ConicProgram,
                     tol: SolveTolerances | None = None,
                     bounds_override: dict[int, tuple[float, float]] | None = None,
                     verbose: bool = False) -> Solution:
    """Solve the continuous relaxation (binaries relaxed to [0, 1]).

    Optimal implies max relative constraint residual <= feas_tol and relative
    duality gap <= opt_tol; infeasibility carries the solver's certificate.
    """
    comp = compile_program(prog)
    return solve_compiled(comp, prog, tol, bounds_override, verbose)
