"""Branch-flow SOCP assembly over a time horizon, static feasibility checks,
and voltage/current metric extraction.

Constraints per branch (upstream bus i, downstream bus j) and timestep:

    v_j - v_i = (R^2 + X^2) l - 2 (R P + X Q)        voltage drop
    P = R l - P_j + sum_children P_child             active flow balance
    Q = X l - Q_j + sum_children Q_child             reactive flow balance
    P^2 + Q^2 <= v_i l                               rotated cone (relaxation)
    P^2 + Q^2 <= S_max^2                             thermal rating
    0 <= l <= S_max^2 / v_min_i                      current-squared cap

plus per-bus squared-voltage bounds, the transformer rating on branches
leaving the slack bus, and substation import/export bounds at the PCC.  The
current cap uses the bus's lower voltage bound, which keeps the row convex;
relative to the exact nonconvex cap this errs on the permissive side, and the
cap only matters when the cone is slack.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .conic import (
    ConicProgram,
    Solution,
    SolveStatus,
    SolveTolerances,
    add_terms,
    lin,
    solve_continuous,
    term,
)
from .der import DerFleet
from .network import Network, TopologyOrder, branch_direction, topology_order
from .profiles import ScenarioData


@dataclass(frozen=True)
class InjectionProfile:
    """Net nodal injections in kW/kvar (generation minus load), bus order."""

    p_kw: np.ndarray  # (n_bus, H)
    q_kvar: np.ndarray  # (n_bus, H)

    def validate(self, net: Network) -> None:
        if self.p_kw.shape != self.q_kvar.shape or self.p_kw.ndim != 2:
            raise ValueError("injection arrays must share shape (n_bus, H)")
        if self.p_kw.shape[0] != net.n_bus:
            raise ValueError(
                f"injections cover {self.p_kw.shape[0]} buses, network has {net.n_bus}")


@dataclass
class PfIndex:
    """Variable ids of the branch-flow block, shaped like the network."""

    v: np.ndarray        # (n_bus, H) squared voltage
    l: np.ndarray        # (n_branch, H) squared current
    pf: np.ndarray       # (n_branch, H) sending-end active flow
    qf: np.ndarray       # (n_branch, H) sending-end reactive flow
    pcc_p: np.ndarray    # (H,) net import at the slack
    pcc_q: np.ndarray
    upstream: list[int]
    downstream: list[int]


@dataclass
class FlowSolution:
    v: np.ndarray
    l: np.ndarray
    pf: np.ndarray
    qf: np.ndarray
    pcc_p: np.ndarray
    pcc_q: np.ndarray

    @classmethod
    def extract(cls, sol: Solution, ix: PfIndex) -> "FlowSolution":
        return cls(v=sol.take(ix.v), l=sol.take(ix.l), pf=sol.take(ix.pf),
                   qf=sol.take(ix.qf), pcc_p=sol.take(ix.pcc_p), pcc_q=sol.take(ix.pcc_q))


def add_branch_flow(prog: ConicProgram, net: Network, horizon: int,
                    p_inj, q_inj, order: TopologyOrder | None = None,
                    operational_bounds: bool = True) -> PfIndex:
    """Add the branch-flow block; `p_inj(bus_index, t)` and `q_inj(bus_index, t)`
    return either a float (pu) or a linear expression for non-slack buses.

    With `operational_bounds` false, voltage/thermal/PCC limits are replaced
    by wide physical boxes: the solve then recovers the plain power flow and
    limits are checked on the solution instead (the relaxation stays exact
    because no upper voltage bound can bind).
    """
    order = order or topology_order(net)
    dirs = branch_direction(net, order)
    H = horizon
    n, m = net.n_bus, net.n_branch
    slack_i = next(i for i, b in enumerate(net.buses) if b.is_slack)

    if operational_bounds:
        v_lb = np.array([[b.v_min_sq] * H for b in net.buses])
        v_ub = np.array([[b.v_max_sq] * H for b in net.buses])
    else:
        v_lb = np.array([[b.v_min_sq if b.is_slack else 0.04] * H for b in net.buses])
        v_ub = np.array([[b.v_max_sq if b.is_slack else 9.0] * H for b in net.buses])
    v = prog.add_vars("v", (n, H), lb=v_lb, ub=v_ub)

    s_cap = np.empty(m)
    l_ub = np.empty(m)
    for k, br in enumerate(net.branches):
        up = dirs[k][0]
        cap = br.s_max
        l_cap = br.s_max ** 2 / net.buses[up].v_min_sq
        if up == slack_i:
            cap = min(cap, net.s_tran)
            l_cap = min(l_cap, net.s_tran ** 2 / net.buses[up].v_min_sq)
        if not operational_bounds:
            cap, l_cap = 25.0 * cap, 625.0 * l_cap
        s_cap[k] = cap
        l_ub[k] = l_cap
    l = prog.add_vars("l", (m, H), lb=0.0, ub=np.tile(l_ub[:, None], (1, H)))
    pf = prog.add_vars("pf", (m, H), lb=-np.tile(s_cap[:, None], (1, H)),
                       ub=np.tile(s_cap[:, None], (1, H)))
    qf = prog.add_vars("qf", (m, H), lb=-np.tile(s_cap[:, None], (1, H)),
                       ub=np.tile(s_cap[:, None], (1, H)))
    if operational_bounds:
        pcc_p = prog.add_vars("pcc_p", H, lb=net.pcc_p_min, ub=net.pcc_p_max)
        pcc_q = prog.add_vars("pcc_q", H, lb=net.pcc_q_min, ub=net.pcc_q_max)
    else:
        box = 25.0 * max(abs(net.pcc_p_min), net.pcc_p_max, abs(net.pcc_q_min),
                         net.pcc_q_max, net.s_tran)
        pcc_p = prog.add_vars("pcc_p", H, lb=-box, ub=box)
        pcc_q = prog.add_vars("pcc_q", H, lb=-box, ub=box)

    def as_expr(val):
        if isinstance(val, tuple):
            return val
        return lin([], [], float(val))

    for t in range(H):
        for k, br in enumerate(net.branches):
            i, j = dirs[k]
            z2 = br.r ** 2 + br.x ** 2
            # voltage drop
            prog.add_lin(lin([v[j, t], v[i, t], l[k, t], pf[k, t], qf[k, t]],
                             [1.0, -1.0, -z2, 2 * br.r, 2 * br.x]),
                         "==", 0.0, name=f"vdrop[{k},{t}]")
            # flow balances: sending flow = R l - inj_j + sum of child flows
            kids = order.children[j]
            p_row = add_terms(term(pf[k, t]), term(l[k, t], -br.r),
                              as_expr(p_inj(j, t)),
                              *(term(pf[c, t], -1.0) for c in kids))
            prog.add_lin(p_row, "==", 0.0, name=f"pbal[{k},{t}]")
            q_row = add_terms(term(qf[k, t]), term(l[k, t], -br.x),
                              as_expr(q_inj(j, t)),
                              *(term(qf[c, t], -1.0) for c in kids))
            prog.add_lin(q_row, "==", 0.0, name=f"qbal[{k},{t}]")
            # relaxed power-flow cone and thermal rating
            prog.add_rotated(l[k, t], v[i, t], [term(pf[k, t]), term(qf[k, t])], tag="pf")
            if operational_bounds:
                prog.add_soc(lin([], [], br.s_max), [term(pf[k, t]), term(qf[k, t])],
                             tag="thermal")
                if i == slack_i and net.s_tran < br.s_max:
                    prog.add_soc(lin([], [], net.s_tran),
                                 [term(pf[k, t]), term(qf[k, t])], tag="transformer")
        # PCC balance over branches leaving the slack
        kids = order.children[slack_i]
        prog.add_lin(add_terms(term(pcc_p[t]), *(term(pf[c, t], -1.0) for c in kids)),
                     "==", 0.0, name=f"pcc_p[{t}]")
        prog.add_lin(add_terms(term(pcc_q[t]), *(term(qf[c, t], -1.0) for c in kids)),
                     "==", 0.0, name=f"pcc_q[{t}]")

    return PfIndex(v, l, pf, qf, pcc_p, pcc_q,
                   [d[0] for d in dirs], [d[1] for d in dirs])


def add_loss_objective(prog: ConicProgram, net: Network, ix: PfIndex, weight: float = 1.0) -> None:
    ids, coefs = [], []
    for k, br in enumerate(net.branches):
        for t in range(ix.l.shape[1]):
            ids.append(ix.l[k, t])
            coefs.append(weight * br.r)
    prog.add_obj_lin(lin(ids, coefs))


@dataclass
class PowerFlowModel:
    program: ConicProgram
    index: PfIndex
    net: Network
    horizon: int


def assemble_branch_flow(net: Network, inj: InjectionProfile, horizon: int | None = None,
                         loss_objective: bool = True,
                         operational_bounds: bool = True) -> PowerFlowModel:
    """Branch-flow program for fixed injections, with a loss-minimizing
    objective by default so the relaxation cones close at the optimum."""
    inj.validate(net)
    H = horizon if horizon is not None else inj.p_kw.shape[1]
    if inj.p_kw.shape[1] < H:
        raise ValueError("injection profile shorter than requested horizon")
    prog = ConicProgram("branch_flow")
    p_pu = inj.p_kw / net.base_kva
    q_pu = inj.q_kvar / net.base_kva
    ix = add_branch_flow(prog, net, H,
                         lambda b, t: float(p_pu[b, t]),
                         lambda b, t: float(q_pu[b, t]),
                         operational_bounds=operational_bounds)
    if loss_objective:
        add_loss_objective(prog, net, ix)
    return PowerFlowModel(prog, ix, net, H)


class Feasibility(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    INDETERMINATE = "indeterminate"


@dataclass
class StaticResult:
    verdict: Feasibility
    flow: FlowSolution | None
    metrics: "FlowMetrics | None"
    solution: Solution
    violations: list[str] = None

    @property
    def feasible(self) -> bool:
        return self.verdict is Feasibility.FEASIBLE


def limit_violations(flow: FlowSolution, net: Network, rel_tol: float = 1e-6) -> list[str]:
    """Operational-limit violations of a physical flow solution.

    Checks per-bus voltage bounds, branch ratings (both the apparent-power cap
    and the squared-current cap), the transformer rating on slack branches,
    and the substation import/export box.
    """
    out: list[str] = []
    order = topology_order(net)
    dirs = branch_direction(net, order)
    slack_i = next(i for i, b in enumerate(net.buses) if b.is_slack)
    for b_idx, bus in enumerate(net.buses):
        v = flow.v[b_idx]
        if v.min() < bus.v_min_sq * (1 - rel_tol):
            out.append(f"undervoltage at bus {bus.id}: v={v.min():.6f} < {bus.v_min_sq:.6f}")
        if v.max() > bus.v_max_sq * (1 + rel_tol):
            out.append(f"overvoltage at bus {bus.id}: v={v.max():.6f} > {bus.v_max_sq:.6f}")
    for k, br in enumerate(net.branches):
        s2 = flow.pf[k] ** 2 + flow.qf[k] ** 2
        cap2 = br.s_max ** 2
        if s2.max() > cap2 * (1 + rel_tol):
            out.append(f"thermal limit on branch {br.from_bus}->{br.to_bus}: "
                       f"S={np.sqrt(s2.max()):.6f} > {br.s_max:.6f}")
        if flow.l[k].max() > cap2 / net.buses[dirs[k][0]].v_min_sq * (1 + rel_tol):
            out.append(f"current limit on branch {br.from_bus}->{br.to_bus}")
        if dirs[k][0] == slack_i and s2.max() > net.s_tran ** 2 * (1 + rel_tol):
            out.append(f"transformer rating exceeded on branch {br.from_bus}->{br.to_bus}")
    margin = rel_tol * max(1.0, abs(net.pcc_p_max), abs(net.pcc_p_min))
    if flow.pcc_p.max() > net.pcc_p_max + margin or flow.pcc_p.min() < net.pcc_p_min - margin:
        out.append("substation active power bound exceeded")
    margin = rel_tol * max(1.0, abs(net.pcc_q_max), abs(net.pcc_q_min))
    if flow.pcc_q.max() > net.pcc_q_max + margin or flow.pcc_q.min() < net.pcc_q_min - margin:
        out.append("substation reactive power bound exceeded")
    return out


def static_injections(net: Network, scen: ScenarioData, fleet: DerFleet) -> InjectionProfile:
    """Net injections of the uncoordinated case: PV at full availability plus
    capacity-scaled baseline profiles minus fixed loads.  Reactive power comes
    from loads only (no inverter support in the static case)."""
    p = -scen.fixed_load_p.astype(float).copy()
    q = -scen.fixed_load_q.astype(float).copy()
    for b_idx, bus in enumerate(net.buses):
        if bus.id in fleet.pv:
            p[b_idx] += scen.alpha_pv * fleet.pv[bus.id].p_max
        if bus.id in fleet.bs:
            p[b_idx] += scen.baseline_bs[b_idx] * fleet.bs[bus.id].p_max
        if bus.id in fleet.ev:
            p[b_idx] += scen.baseline_ev[b_idx] * fleet.ev[bus.id].charger_kw
        if bus.id in fleet.hp:
            p[b_idx] += scen.baseline_hp[b_idx] * fleet.hp[bus.id].p_rated
    return InjectionProfile(p, q)


EXACTNESS_TOL = 1e-6


def solve_physical_flow(net: Network, inj: InjectionProfile,
                        tol: SolveTolerances | None = None) -> tuple[FlowSolution | None, Solution]:
    """Loss-minimizing flow with operational limits relaxed to wide boxes.

    In this regime the relaxation is exact on radial networks (no upper
    voltage bound can bind), so the result is the plain AC power flow for the
    given injections.  Returns (None, solution) when no AC solution exists or
    the solve is numerically unusable.
    """
    from .conic import soc_tightness

    model = assemble_branch_flow(net, inj, operational_bounds=False)
    sol = solve_continuous(model.program, tol)
    if sol.status is not SolveStatus.OPTIMAL:
        return None, sol
    if soc_tightness(model.program, sol) > EXACTNESS_TOL:
        # cannot certify the solution as physical
        sol.stats["cone_slack"] = soc_tightness(model.program, sol)
        return None, sol
    return FlowSolution.extract(sol, model.index), sol


def static_feasible(net: Network, scen: ScenarioData, fleet: DerFleet,
                    time_window: tuple[int, int] | None = None,
                    tol: SolveTolerances | None = None) -> StaticResult:
    """Feasibility of the uncoordinated injections against the grid physics:
    run the power flow for the fixed injections, then check every operational
    limit on the physical solution.

    The flow is solved with the loss objective and relaxed operational boxes,
    which keeps the cones tight and the voltages/currents physical; checking
    limits in-program instead would let the relaxation absorb overvoltage
    into fictitious losses and overstate hosting capacity.  Numerical failure
    is reported as INDETERMINATE, never as infeasibility.
    """
    scen.validate(net)
    inj = static_injections(net, scen, fleet)
    if time_window is not None:
        lo, hi = time_window
        inj = InjectionProfile(inj.p_kw[:, lo:hi + 1], inj.q_kvar[:, lo:hi + 1])
    flow, sol = solve_physical_flow(net, inj, tol)
    if flow is not None:
        violations = limit_violations(flow, net)
        verdict = Feasibility.FEASIBLE if not violations else Feasibility.INFEASIBLE
        return StaticResult(verdict, flow, flow_metrics(flow, net), sol, violations)
    if sol.status is SolveStatus.INFEASIBLE:
        return StaticResult(Feasibility.INFEASIBLE, None, None, sol,
                            ["no AC power flow solution"])
    return StaticResult(Feasibility.INDETERMINATE, None, None, sol, [])


@dataclass
class FlowMetrics:
    """Voltage magnitudes (pu) and line loading (% of ampacity), per timestep
    and overall."""

    t_vmin: np.ndarray
    t_vmax: np.ndarray
    t_vmean: np.ndarray
    t_vmedian: np.ndarray
    t_imax_pct: np.ndarray
    t_imean_pct: np.ndarray
    t_imedian_pct: np.ndarray
    pcc_p: np.ndarray
    pcc_q: np.ndarray

    CSV_HEADER = ("time", "vmin", "vmax", "vmean", "vmedian",
                  "imax_pct", "imean_pct", "imedian_pct", "pcc_p", "pcc_q")

    @property
    def v_min(self) -> float:
        return float(self.t_vmin.min())

    @property
    def v_max(self) -> float:
        return float(self.t_vmax.max())

    @property
    def v_mean(self) -> float:
        return float(self.t_vmean.mean())

    @property
    def v_median(self) -> float:
        return float(np.median(self.t_vmedian))

    @property
    def i_max_pct(self) -> float:
        return float(self.t_imax_pct.max())

    @property
    def i_mean_pct(self) -> float:
        return float(self.t_imean_pct.mean())

    @property
    def i_median_pct(self) -> float:
        return float(np.median(self.t_imedian_pct))

    def csv_rows(self) -> list[tuple]:
        rows = []
        for t in range(len(self.t_vmin)):
            rows.append((t, self.t_vmin[t], self.t_vmax[t], self.t_vmean[t],
                         self.t_vmedian[t], self.t_imax_pct[t], self.t_imean_pct[t],
                         self.t_imedian_pct[t], self.pcc_p[t], self.pcc_q[t]))
        return rows


def flow_metrics(flow: FlowSolution, net: Network) -> FlowMetrics:
    vm = np.sqrt(np.maximum(flow.v, 0.0))
    s_max = np.array([br.s_max for br in net.branches])[:, None]
    # ampacity I_max = S_max / V_ref with V_ref = 1 pu
    loading = 100.0 * np.sqrt(np.maximum(flow.l, 0.0)) / s_max
    return FlowMetrics(
        t_vmin=vm.min(axis=0), t_vmax=vm.max(axis=0), t_vmean=vm.mean(axis=0),
        t_vmedian=np.median(vm, axis=0),
        t_imax_pct=loading.max(axis=0), t_imean_pct=loading.mean(axis=0),
        t_imedian_pct=np.median(loading, axis=0),
        pcc_p=flow.pcc_p.copy(), pcc_q=flow.pcc_q.copy(),
    )
