"""Deterministic branch-and-bound for mixed-integer conic programs.

Node relaxations are continuous solves of the same compiled program with
retightened binary bounds.  Node selection is best-bound, branching picks the
most fractional binary (ties broken by lowest variable id), and a rounding
heuristic probes for incumbents at every node, so two runs with identical
inputs explore identical trees.

A numerically stalled node relaxation is never treated as infeasible: the
node keeps its parent's (valid) bound, branches on, and any unresolvable leaf
only degrades the final reported gap.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .backend import compile_program, solve_compiled
from .program import ConicProgram, Solution, SolveStatus, SolveTolerances

INT_TOL = 1e-6


@dataclass
class WarmStart:
    """Advisory variable hints; out-of-bounds hints are clamped, never errors."""

    values: dict[int, float] = field(default_factory=dict)

    @classmethod
    def from_solution(cls, prog: ConicProgram, sol: Solution) -> "WarmStart":
        if sol.values is None:
            return cls()
        return cls({i: float(sol.values[i]) for i in range(min(prog.num_vars, len(sol.values)))})


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixings: dict[int, float] = field(compare=False)


def _fractional(x: np.ndarray, bin_ids: list[int], fixings: dict[int, float]) -> list[tuple[float, int]]:
    out = []
    for i in bin_ids:
        if i in fixings:
            continue
        frac = abs(float(x[i]) - round(float(x[i])))
        if frac > INT_TOL:
            out.append((frac, i))
    return out


def solve_misocp(prog: ConicProgram,
                 gap_tol: float = 1e-4,
                 warm: WarmStart | None = None,
                 node_budget: int = 20000,
                 tol: SolveTolerances | None = None) -> Solution:
    """Branch-and-bound over the binary variables of `prog`.

    Returns an incumbent with relative optimality gap <= gap_tol, an
    infeasibility verdict when no binary assignment admits a feasible
    relaxation, GAP_LIMIT when stopping with an incumbent whose gap exceeds
    gap_tol (node budget or unresolvable leaves), or ITERATION_LIMIT when no
    incumbent could be certified at all.
    """
    tol = tol or SolveTolerances()
    comp = compile_program(prog)
    bin_ids = prog.binary_ids
    t0 = time.perf_counter()

    def relax(fixings: dict[int, float]) -> Solution:
        override = {i: (v, v) for i, v in fixings.items()}
        return solve_compiled(comp, prog, tol, override)

    if not bin_ids:
        sol = relax({})
        sol.stats["nodes"] = 1
        sol.stats["mip_gap"] = 0.0
        return sol

    incumbent: Solution | None = None
    inc_obj = np.inf
    nodes = 0
    stuck_bounds: list[float] = []

    def consider(sol: Solution) -> None:
        nonlocal incumbent, inc_obj
        if sol.is_optimal and sol.objective is not None and sol.objective < inc_obj - 1e-12:
            incumbent, inc_obj = sol, sol.objective

    # warm start: try the hinted binary assignment as an initial incumbent
    if warm is not None and warm.values:
        fix = {}
        for i in bin_ids:
            v = warm.values.get(i, prog.hints.get(i, 0.0))
            fix[i] = float(round(min(1.0, max(0.0, v))))
        consider(relax(fix))

    heap: list[_Node] = []
    seq = 0
    heapq.heappush(heap, _Node(-np.inf, seq, {}))
    genuinely_infeasible = True  # falsified by any usable node or incumbent

    def lower_bound() -> float:
        cands = [n.bound for n in heap] + stuck_bounds
        return min(cands) if cands else inc_obj

    def gap_of(lb: float) -> float:
        if incumbent is None:
            return np.inf
        if lb == -np.inf:
            return np.inf
        return (inc_obj - lb) / max(1.0, abs(inc_obj))

    def finish() -> Solution:
        lb = lower_bound()
        gap = gap_of(lb)
        wall = time.perf_counter() - t0
        if incumbent is not None:
            status = SolveStatus.OPTIMAL if gap <= gap_tol else SolveStatus.GAP_LIMIT
            out = Solution(status, incumbent.values, incumbent.objective,
                           dict(incumbent.stats), residual=incumbent.residual)
            out.stats.update(nodes=nodes, mip_gap=max(0.0, gap), wall_time=wall)
            return out
        if genuinely_infeasible:
            return Solution(SolveStatus.INFEASIBLE, None, None,
                            {"nodes": nodes, "wall_time": wall})
        return Solution(SolveStatus.ITERATION_LIMIT, None, None,
                        {"nodes": nodes, "wall_time": wall})

    while heap:
        if incumbent is not None and gap_of(lower_bound()) <= gap_tol:
            return finish()
        node = heapq.heappop(heap)
        if incumbent is not None and gap_of(node.bound) <= gap_tol:
            # best-bound order: nothing left can improve the incumbent
            heapq.heappush(heap, node)
            return finish()
        if nodes >= node_budget:
            heapq.heappush(heap, node)
            return finish()
        sol = relax(node.fixings)
        nodes += 1
        if sol.status is SolveStatus.INFEASIBLE:
            continue
        unfixed = [i for i in bin_ids if i not in node.fixings]
        usable = sol.is_optimal and sol.values is not None and sol.objective is not None
        if usable:
            genuinely_infeasible = False
            if incumbent is not None and sol.objective >= inc_obj - gap_tol * max(1.0, abs(inc_obj)):
                continue
            fracs = _fractional(sol.values, bin_ids, node.fixings)
            if not fracs:
                consider(sol)
                continue
            # rounding heuristic: fix every binary at its rounded relaxation value
            trial = dict(node.fixings)
            for i in bin_ids:
                if i not in trial:
                    trial[i] = float(round(float(sol.values[i])))
            consider(relax(trial))
            frac, var = max(fracs, key=lambda fv: (fv[0], -fv[1]))
            child_bound = sol.objective
        else:
            # numerically unusable relaxation: keep the parent's valid bound
            genuinely_infeasible = False
            if not unfixed:
                stuck_bounds.append(node.bound)
                continue
            fracs = _fractional(sol.values, bin_ids, node.fixings) if sol.values is not None else []
            var = max(fracs, key=lambda fv: (fv[0], -fv[1]))[1] if fracs else unfixed[0]
            child_bound = node.bound
        for val in (0.0, 1.0):
            seq += 1
            heapq.heappush(heap, _Node(child_bound, seq, {**node.fixings, var: val}))

    return finish()
