"""Conic program container.

A :class:`ConicProgram` holds continuous and binary variables with bounds,
linear equality/inequality constraints, second-order-cone constraints
(standard and rotated), and a convex objective built from a linear part plus
weighted sum-of-squares groups.  Quadratic groups are lifted to rotated-cone
epigraphs at finalization, so solver backends only ever see a linear
objective over cones.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

INF = math.inf


class ProgramError(ValueError):
    """Malformed program: bad variable reference, bounds, or cone shape."""


# A linear expression is (ids, coefs, const).  Helper constructors below keep
# assembly code compact without a full expression-algebra layer.
LinTerm = tuple[np.ndarray, np.ndarray, float]


def lin(ids: Sequence[int], coefs: Sequence[float], const: float = 0.0) -> LinTerm:
    return (np.asarray(ids, dtype=np.int64), np.asarray(coefs, dtype=np.float64), float(const))


def term(var_id: int, coef: float = 1.0, const: float = 0.0) -> LinTerm:
    return lin([var_id], [coef], const)


def const_expr(value: float) -> LinTerm:
    return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64), float(value))


def add_terms(*exprs: LinTerm) -> LinTerm:
    ids = np.concatenate([e[0] for e in exprs])
    coefs = np.concatenate([e[1] for e in exprs])
    c = sum(e[2] for e in exprs)
    return (ids, coefs, float(c))


def scale_term(expr: LinTerm, s: float) -> LinTerm:
    return (expr[0], expr[1] * s, expr[2] * s)


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    GAP_LIMIT = "gap_limit"


@dataclass
class Solution:
    """Result of a continuous or mixed-integer solve."""

    status: SolveStatus
    values: np.ndarray | None
    objective: float | None
    stats: dict = field(default_factory=dict)
    certificate: np.ndarray | None = None
    residual: float | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def value(self, var_id: int) -> float:
        if self.values is None:
            raise ProgramError("solution carries no variable values")
        return float(self.values[var_id])

    def take(self, ids: np.ndarray) -> np.ndarray:
        if self.values is None:
            raise ProgramError("solution carries no variable values")
        return self.values[np.asarray(ids, dtype=np.int64)]


@dataclass
class SolveTolerances:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-8


@dataclass
class _LinRow:
    ids: np.ndarray
    coefs: np.ndarray
    sense: str  # "==" or "<="
    rhs: float
    name: str


@dataclass
class _SocCone:
    head: LinTerm
    rows: list[LinTerm]
    tag: str


@dataclass
class _RotatedCone:
    # u*w >= ||z||^2 with u a variable id and w a variable id or a constant.
    u: int
    w: int | float
    z: list[LinTerm]
    tag: str


@dataclass
class _QuadGroup:
    weight: float
    exprs: list[LinTerm]
    name: str
    epi_var: int = -1


class ConicProgram:
    """Mutable conic program; finalize before handing to a backend."""

    def __init__(self, name: str = ""):
        self.name = name
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.hints: dict[int, float] = {}
        self.var_names: list[str] = []
        self.lin_rows: list[_LinRow] = []
        self.soc_cones: list[_SocCone] = []
        self.rotated_cones: list[_RotatedCone] = []
        self.obj_lin: dict[int, float] = {}
        self.obj_const: float = 0.0
        self.quad_groups: list[_QuadGroup] = []
        self._finalized = False

    # -- variables ---------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.lb)

    @property
    def binary_ids(self) -> list[int]:
        return [i for i, b in enumerate(self.binary) if b]

    def add_var(self, name: str, lb: float = -INF, ub: float = INF,
                binary: bool = False, hint: float | None = None) -> int:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ProgramError(f"variable {name}: lower bound {lb} exceeds upper bound {ub}")
        vid = len(self.lb)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(bool(binary))
        self.var_names.append(name)
        if hint is not None:
            self.hints[vid] = float(hint)
        return vid

    def add_vars(self, name: str, shape: int | tuple[int, ...],
                 lb: float | np.ndarray = -INF, ub: float | np.ndarray = INF,
                 binary: bool = False) -> np.ndarray:
        """Add a block of variables; returns an id array of the given shape."""
        shape_t = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape_t))
        lb_a = np.broadcast_to(np.asarray(lb, dtype=float), shape_t).ravel()
        ub_a = np.broadcast_to(np.asarray(ub, dtype=float), shape_t).ravel()
        ids = np.empty(n, dtype=np.int64)
        for k in range(n):
            ids[k] = self.add_var(f"{name}[{k}]", lb_a[k], ub_a[k], binary=binary)
        return ids.reshape(shape_t)

    def fix_var(self, var_id: int, value: float) -> None:
        self.lb[var_id] = self.ub[var_id] = float(value)

    def set_hint(self, var_id: int, value: float) -> None:
        self.hints[var_id] = float(value)

    # -- constraints ---------------------------------------------------------

    def add_lin(self, expr: LinTerm, sense: str, rhs: float, name: str = "") -> None:
        """Add `expr sense rhs` with sense in {==, <=, >=}; constants fold into rhs."""
        ids, coefs, c = expr
        if ids.size and (ids.max() >= self.num_vars or ids.min() < 0):
            raise ProgramError(f"row {name or '?'} references unknown variable id")
        rhs = float(rhs) - c
        if sense == ">=":
            ids, coefs, sense, rhs = ids, -coefs, "<=", -rhs
        if sense not in ("==", "<="):
            raise ProgramError(f"unknown sense {sense!r}")
        self.lin_rows.append(_LinRow(ids, np.asarray(coefs, dtype=float), sense, rhs, name))

    def add_soc(self, head: LinTerm, rows: Iterable[LinTerm], tag: str = "") -> None:
        """|| rows ||_2 <= head."""
        self.soc_cones.append(_SocCone(head, list(rows), tag))

    def add_rotated(self, u: int, w: int | float, z: Iterable[LinTerm], tag: str = "") -> None:
        """u * w >= ||z||^2 with u (and w when a variable) bounded nonnegative."""
        if self.lb[u] < 0:
            raise ProgramError(f"rotated cone head {self.var_names[u]} must have nonnegative lower bound")
        if isinstance(w, (int, np.integer)) and not isinstance(w, bool):
            if self.lb[int(w)] < 0:
                raise ProgramError(f"rotated cone side {self.var_names[int(w)]} must have nonnegative lower bound")
            w = int(w)
        else:
            w = float(w)
            if w < 0:
                raise ProgramError("rotated cone constant side must be nonnegative")
        self.rotated_cones.append(_RotatedCone(u, w, list(z), tag))

    # -- objective -----------------------------------------------------------

    def add_obj_lin(self, expr: LinTerm) -> None:
        ids, coefs, c = expr
        for i, a in zip(ids.tolist(), coefs.tolist()):
            self.obj_lin[i] = self.obj_lin.get(i, 0.0) + a
        self.obj_const += c

    def add_obj_quad_group(self, weight: float, exprs: Iterable[LinTerm], name: str) -> None:
        """Add weight * sum_j exprs[j]^2 to the objective (weight >= 0)."""
        if weight < 0:
            raise ProgramError(f"quadratic group {name}: negative weight {weight}")
        exprs = list(exprs)
        if weight == 0.0 or not exprs:
            return
        self.quad_groups.append(_QuadGroup(float(weight), exprs, name))

    # -- finalization ----------------------------------------------------------

    def finalize(self) -> None:
        """Lift quadratic groups to rotated-cone epigraphs; idempotent."""
        if self._finalized:
            return
        for g in self.quad_groups:
            s = self.add_var(f"__epi[{g.name}]", lb=0.0)
            g.epi_var = s
            self.add_rotated(s, 1.0, g.exprs, tag="quad")
            self.obj_lin[s] = self.obj_lin.get(s, 0.0) + g.weight
        self._finalized = True

    # -- residuals & diagnostics -----------------------------------------------

    def max_residual(self, x: np.ndarray,
                     bounds_override: dict[int, tuple[float, float]] | None = None) -> float:
        """Max relative violation over rows, variable bounds, and cones."""
        worst = 0.0
        for r in self.lin_rows:
            lhs = float(x[r.ids] @ r.coefs) if r.ids.size else 0.0
            gap = abs(lhs - r.rhs) if r.sense == "==" else max(0.0, lhs - r.rhs)
            worst = max(worst, gap / (1.0 + abs(r.rhs)))
        for i in range(self.num_vars):
            lo, hi = self.lb[i], self.ub[i]
            if bounds_override and i in bounds_override:
                lo, hi = bounds_override[i]
            if lo > -INF:
                worst = max(worst, (lo - x[i]) / (1.0 + abs(lo)))
            if hi < INF:
                worst = max(worst, (x[i] - hi) / (1.0 + abs(hi)))
        for cone in self.soc_cones:
            head = _eval_expr(cone.head, x)
            norm = math.sqrt(sum(_eval_expr(e, x) ** 2 for e in cone.rows))
            worst = max(worst, (norm - head) / (1.0 + abs(head)))
        for cone in self.rotated_cones:
            u = float(x[cone.u])
            w = float(x[cone.w]) if isinstance(cone.w, int) else cone.w
            zz = sum(_eval_expr(e, x) ** 2 for e in cone.z)
            worst = max(worst, (zz - u * w) / max(1.0, abs(u * w)))
        return worst

    def objective_value(self, x: np.ndarray) -> float:
        val = self.obj_const
        for i, a in self.obj_lin.items():
            val += a * float(x[i])
        return val

    def dump(self) -> str:
        """Human-readable listing of variables, rows, and cones for cross-checks."""
        out = [f"conic program {self.name!r}: {self.num_vars} vars, "
               f"{len(self.lin_rows)} linear rows, {len(self.soc_cones)} soc cones, "
               f"{len(self.rotated_cones)} rotated cones"]
        for i in range(self.num_vars):
            kind = "bin" if self.binary[i] else "cont"
            out.append(f"var {i} {self.var_names[i]} {kind} [{self.lb[i]}, {self.ub[i]}]")
        for r in self.lin_rows:
            body = " + ".join(f"{c:.12g}*x{i}" for i, c in zip(r.ids.tolist(), r.coefs.tolist()))
            out.append(f"row {r.name or '-'}: {body or '0'} {r.sense} {r.rhs:.12g}")
        for cone in self.soc_cones:
            out.append(f"soc {cone.tag or '-'}: ||{len(cone.rows)} rows|| <= head")
        for cone in self.rotated_cones:
            w = f"x{cone.w}" if isinstance(cone.w, int) else f"{cone.w:.12g}"
            out.append(f"rotated {cone.tag or '-'}: x{cone.u} * {w} >= ||{len(cone.z)} exprs||^2")
        body = " + ".join(f"{c:.12g}*x{i}" for i, c in sorted(self.obj_lin.items()))
        out.append(f"min {body or '0'} + {self.obj_const:.12g}")
        return "\n".join(out)


def _eval_expr(expr: LinTerm, x: np.ndarray) -> float:
    ids, coefs, c = expr
    return float(x[ids] @ coefs) + c if ids.size else c


def soc_tightness(prog: ConicProgram, sol: Solution, tag: str = "pf") -> float:
    """Max relative slack of tagged rotated cones at a solution.

    For power-flow cones this is (v*l - P^2 - Q^2) / max(1, v*l); a value near
    zero means the relaxation is exact and the solution is physically
    meaningful.
    """
    if not sol.is_optimal or sol.values is None:
        raise ProgramError("soc_tightness requires an optimal solution")
    x = sol.values
    worst = 0.0
    for cone in prog.rotated_cones:
        if cone.tag != tag:
            continue
        u = float(x[cone.u])
        w = float(x[cone.w]) if isinstance(cone.w, int) else cone.w
        zz = sum(_eval_expr(e, x) ** 2 for e in cone.z)
        worst = max(worst, (u * w - zz) / max(1.0, u * w))
    return worst
