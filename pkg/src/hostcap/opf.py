"""Multiperiod coordinated-dispatch MISOCP: branch-flow constraints plus the
device models of every fleet unit, under the seven-group dispatch objective
(curtailment, losses, PV-coupled charging, comfort, cycling for HP/BS/EV, EV
SOC tracking, and PCC energy cost with battery price arbitrage).

All powers inside the program are per-unit; the price signal is rescaled by
base_kva * dt so the import term is in currency.  Battery and EV
charge/discharge splits carry per-step binaries that forbid simultaneous
operation, which makes the dispatch problem mixed-integer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import (
    ConicProgram,
    Solution,
    SolveStatus,
    SolveTolerances,
    WarmStart,
    add_terms,
    lin,
    soc_tightness,
    solve_continuous,
    solve_misocp,
    term,
)
from .der import (
    BatteryParams,
    DerFleet,
    DeviceError,
    EVParams,
    HPParams,
    ObjectiveWeights,
    battery_soc_step,
    ev_available,
    hp_temp_step,
)
from .network import Network, topology_order
from .powerflow import FlowMetrics, FlowSolution, PfIndex, add_branch_flow, add_loss_objective, flow_metrics
from .profiles import ScenarioData


@dataclass
class StorageIndex:
    pd: np.ndarray          # (H,) discharge power ids, pu
    pc: np.ndarray          # (H,) charge power ids, pu
    ud: np.ndarray          # (H,) binary ids (-1 where pinned)
    uc: np.ndarray
    q: np.ndarray           # (H,) reactive ids
    soc: np.ndarray         # (H+1,) fraction ids


@dataclass
class HpIndex:
    p: np.ndarray           # (H,) nonpositive electrical power ids, pu
    t_in: np.ndarray        # (H+1,) indoor temperature ids, degC
    modes: list[str]        # per-step "cool" / "heat"


@dataclass
class OpfModel:
    program: ConicProgram
    flow_index: PfIndex
    pv_p: dict[int, np.ndarray]
    pv_q: dict[int, np.ndarray]
    bs: dict[int, StorageIndex]
    ev: dict[int, StorageIndex]
    hp: dict[int, HpIndex]
    net: Network
    fleet: DerFleet
    scen: ScenarioData
    weights: ObjectiveWeights
    horizon: int
    allow_curtailment: bool


def _tan_phi(pf_min: float) -> float:
    return math.tan(math.acos(pf_min))


def _add_storage(prog: ConicProgram, name: str, p_max_pu: float, e_max_kwh: float,
                 params, base_kva: float, dt: float, H: int,
                 available=None, can_discharge: bool = True) -> StorageIndex:
    """Charge/discharge split with anti-simultaneity binaries, SOC recurrence,
    terminal equality, and the reactive envelope."""
    avail = [True] * H if available is None else [bool(available(t)) for t in range(H)]
    pd_ub = np.array([p_max_pu if (a and can_discharge) else 0.0 for a in avail])
    pc_ub = np.array([p_max_pu if a else 0.0 for a in avail])
    pd = prog.add_vars(f"{name}.pd", H, lb=0.0, ub=pd_ub)
    pc = prog.add_vars(f"{name}.pc", H, lb=0.0, ub=pc_ub)
    tan_phi = _tan_phi(params.pf_min)
    q = prog.add_vars(f"{name}.q", H,
                      lb=np.where(avail, -p_max_pu * tan_phi, 0.0),
                      ub=np.where(avail, p_max_pu * tan_phi, 0.0))
    soc = prog.add_vars(f"{name}.soc", H + 1, lb=params.soc_min, ub=params.soc_max)
    prog.fix_var(soc[0], params.soc_init)

    ud = np.full(H, -1, dtype=np.int64)
    uc = np.full(H, -1, dtype=np.int64)
    for t in range(H):
        if avail[t] and can_discharge and p_max_pu > 0:
            # both directions live: binaries forbid simultaneous charge/discharge
            ud[t] = prog.add_var(f"{name}.ud[{t}]", binary=True)
            uc[t] = prog.add_var(f"{name}.uc[{t}]", binary=True)
            prog.add_lin(lin([ud[t], uc[t]], [1.0, 1.0]), "<=", 1.0, name=f"{name}.excl[{t}]")
            prog.add_lin(lin([pd[t], ud[t]], [1.0, -p_max_pu]), "<=", 0.0, name=f"{name}.dcap[{t}]")
            prog.add_lin(lin([pc[t], uc[t]], [1.0, -p_max_pu]), "<=", 0.0, name=f"{name}.ccap[{t}]")
        # reactive envelope tied to the active charge/discharge magnitude
        prog.add_lin(lin([q[t], pd[t], pc[t]], [1.0, -tan_phi, -tan_phi]), "<=", 0.0,
                     name=f"{name}.qub[{t}]")
        prog.add_lin(lin([q[t], pd[t], pc[t]], [-1.0, -tan_phi, -tan_phi]), "<=", 0.0,
                     name=f"{name}.qlb[{t}]")
        # SOC recurrence in fractions; powers are pu so rescale by base_kva
        coef = dt * base_kva / e_max_kwh
        prog.add_lin(lin([soc[t + 1], soc[t], pc[t], pd[t]],
                         [1.0, -(1.0 - params.delta), -coef * params.eta, coef / params.eta]),
                     "==", 0.0, name=f"{name}.soc[{t}]")
    prog.add_lin(lin([soc[H], soc[0]], [1.0, -1.0]), "==", 0.0, name=f"{name}.terminal")
    return StorageIndex(pd, pc, ud, uc, q, soc)


def _add_heat_pump(prog: ConicProgram, name: str, params: HPParams,
                   t_out: np.ndarray, base_kva: float, dt: float, H: int) -> HpIndex:
    if not (params.t_min <= params.t_init <= params.t_max):
        raise DeviceError(
            f"{name}: initial temperature {params.t_init} outside [{params.t_min}, {params.t_max}]")
    p_rated_pu = params.p_rated / base_kva
    p = prog.add_vars(f"{name}.p", H, lb=-p_rated_pu, ub=0.0)
    t_in = prog.add_vars(f"{name}.t", H + 1, lb=params.t_min, ub=params.t_max)
    prog.fix_var(t_in[0], params.t_init)
    theta = params.theta_for(dt)
    rho_pu = params.rho * base_kva  # degC per pu of electrical power
    # mode anchored to the exogenous comparison against the setpoint, so the
    # recurrence stays linear in the decisions
    modes = ["cool" if t_out[t] >= params.t_set else "heat" for t in range(H)]
    for t in range(H):
        sgn = 1.0 if modes[t] == "cool" else -1.0
        prog.add_lin(lin([t_in[t + 1], t_in[t], p[t]],
                         [1.0, -theta, -sgn * (1.0 - theta) * rho_pu]),
                     "==", (1.0 - theta) * float(t_out[t]), name=f"{name}.dyn[{t}]")
        if t + 1 < H:
            ramp = params.ramp_frac * p_rated_pu
            prog.add_lin(lin([p[t + 1], p[t]], [1.0, -1.0]), "<=", ramp, name=f"{name}.rampup[{t}]")
            prog.add_lin(lin([p[t + 1], p[t]], [-1.0, 1.0]), "<=", ramp, name=f"{name}.rampdn[{t}]")
    return HpIndex(p, t_in, modes)


def assemble_opf(net: Network, fleet: DerFleet, scen: ScenarioData,
                 weights: ObjectiveWeights | None = None,
                 horizon: int | None = None,
                 allow_curtailment: bool = True) -> OpfModel:
    """Build the coordinated-dispatch program for one scenario.

    With `allow_curtailment` false, PV output is pinned to its availability
    profile (the hosting-capacity convention: capacity must be absorbable
    without spilling solar).
    """
    weights = weights or ObjectiveWeights()
    scen.validate(net)
    H = horizon if horizon is not None else scen.horizon
    if H > scen.horizon:
        raise DeviceError("requested horizon exceeds the scenario data")
    dt, base = scen.dt, net.base_kva
    prog = ConicProgram("opf")
    slack_id = net.slack.id
    for der in ("pv", "bs", "ev", "hp"):
        if slack_id in getattr(fleet, der):
            raise DeviceError(f"{der} unit placed at the slack bus {slack_id}")

    pv_p: dict[int, np.ndarray] = {}
    pv_q: dict[int, np.ndarray] = {}
    bs: dict[int, StorageIndex] = {}
    ev: dict[int, StorageIndex] = {}
    hp: dict[int, HpIndex] = {}

    for bus in net.buses:
        bid = bus.id
        if bid in fleet.pv:
            params = fleet.pv[bid]
            cap_pu = params.p_max / base
            avail = scen.alpha_pv[:H] * cap_pu
            if allow_curtailment:
                p_ids = prog.add_vars(f"pv{bid}.p", H, lb=0.0, ub=avail)
            else:
                p_ids = prog.add_vars(f"pv{bid}.p", H, lb=avail, ub=avail)
            tan_phi = _tan_phi(params.pf_min)
            q_ids = prog.add_vars(f"pv{bid}.q", H, lb=-cap_pu * tan_phi, ub=cap_pu * tan_phi)
            for t in range(H):
                prog.add_lin(lin([q_ids[t], p_ids[t]], [1.0, -tan_phi]), "<=", 0.0,
                             name=f"pv{bid}.qub[{t}]")
                prog.add_lin(lin([q_ids[t], p_ids[t]], [-1.0, -tan_phi]), "<=", 0.0,
                             name=f"pv{bid}.qlb[{t}]")
            pv_p[bid], pv_q[bid] = p_ids, q_ids
        if bid in fleet.bs:
            params = fleet.bs[bid]
            bs[bid] = _add_storage(prog, f"bs{bid}", params.p_max / base, params.e_max,
                                   params, base, dt, H)
        if bid in fleet.ev:
            params = fleet.ev[bid]
            ev[bid] = _add_storage(prog, f"ev{bid}", params.charger_kw / base, params.e_max,
                                   params, base, dt, H,
                                   available=lambda t, p=params: ev_available(p, t),
                                   can_discharge=params.v2g)
        if bid in fleet.hp:
            hp[bid] = _add_heat_pump(prog, f"hp{bid}", fleet.hp[bid], scen.t_out, base, dt, H)

    load_p_pu = scen.fixed_load_p[:, :H] / base
    load_q_pu = scen.fixed_load_q[:, :H] / base

    def p_inj(b_idx: int, t: int):
        bid = net.buses[b_idx].id
        parts = [lin([], [], -float(load_p_pu[b_idx, t]))]
        if bid in pv_p:
            parts.append(term(pv_p[bid][t]))
        if bid in bs:
            parts.append(lin([bs[bid].pd[t], bs[bid].pc[t]], [1.0, -1.0]))
        if bid in ev:
            parts.append(lin([ev[bid].pd[t], ev[bid].pc[t]], [1.0, -1.0]))
        if bid in hp:
            parts.append(term(hp[bid].p[t]))
        return add_terms(*parts)

    def q_inj(b_idx: int, t: int):
        bid = net.buses[b_idx].id
        parts = [lin([], [], -float(load_q_pu[b_idx, t]))]
        if bid in pv_q:
            parts.append(term(pv_q[bid][t]))
        if bid in bs:
            parts.append(term(bs[bid].q[t]))
        if bid in ev:
            parts.append(term(ev[bid].q[t]))
        return add_terms(*parts)

    ix = add_branch_flow(prog, net, H, p_inj, q_inj, order=topology_order(net))

    _add_opf_objective(prog, net, ix, pv_p, bs, ev, hp, fleet, scen, weights, H,
                       allow_curtailment)
    return OpfModel(prog, ix, pv_p, pv_q, bs, ev, hp, net, fleet, scen, weights, H,
                    allow_curtailment)


def _add_opf_objective(prog, net, ix, pv_p, bs, ev, hp, fleet, scen, weights, H,
                       allow_curtailment) -> None:
    base, dt = net.base_kva, scen.dt
    add_loss_objective(prog, net, ix, weight=weights.w_loss)

    lam_int = scen.lmp[:H] * base * dt  # $ per pu of power held one step
    lam_bar = weights.lambda_bar if weights.lambda_bar is not None else float(np.mean(scen.lmp[:H]))
    lam_dev = lam_int - lam_bar * base * dt
    if weights.w_import:
        prog.add_obj_lin(lin(ix.pcc_p, weights.w_import * lam_int))

    alpha = scen.alpha_pv[:H]
    curtail_exprs = []
    for bid, p_ids in pv_p.items():
        if allow_curtailment:
            cap_pu = fleet.pv[bid].p_max / base
            curtail_exprs += [lin([p_ids[t]], [1.0], -float(alpha[t]) * cap_pu)
                              for t in range(H)]
    prog.add_obj_quad_group(weights.w_curtail, curtail_exprs, "curtailment")

    for bid, s in bs.items():
        # reward charging while solar is available, and align with prices
        coefs_d = weights.w_couple_bs * alpha - (weights.w_import * lam_dev if weights.w_import else 0.0)
        prog.add_obj_lin(lin(s.pd, coefs_d))
        prog.add_obj_lin(lin(s.pc, -coefs_d))
        prog.add_obj_quad_group(
            weights.w_cycle_bs,
            [lin([s.pd[t + 1], s.pc[t + 1], s.pd[t], s.pc[t]], [1.0, -1.0, -1.0, 1.0])
             for t in range(H - 1)], f"cycling_bs[{bid}]")
    for bid, s in ev.items():
        prog.add_obj_lin(lin(s.pd, weights.w_couple_ev * alpha))
        prog.add_obj_lin(lin(s.pc, -weights.w_couple_ev * alpha))
        prog.add_obj_quad_group(
            weights.w_cycle_ev,
            [lin([s.pd[t + 1], s.pc[t + 1], s.pd[t], s.pc[t]], [1.0, -1.0, -1.0, 1.0])
             for t in range(H - 1)], f"cycling_ev[{bid}]")
        t_star = min(fleet.ev[bid].target_time, H)
        prog.add_obj_quad_group(
            weights.w_soc_track,
            [lin([s.soc[t_star]], [1.0], -fleet.ev[bid].soc_target)], f"soc_track[{bid}]")
    for bid, h in hp.items():
        t_set = fleet.hp[bid].t_set
        prog.add_obj_quad_group(
            weights.w_comfort,
            [lin([h.t_in[t]], [1.0], -t_set) for t in range(1, H + 1)], f"comfort[{bid}]")
        prog.add_obj_quad_group(
            weights.w_cycle_hp,
            [lin([h.p[t + 1], h.p[t]], [1.0, -1.0]) for t in range(H - 1)],
            f"cycling_hp[{bid}]")


@dataclass
class DispatchResult:
    """Solved dispatch: per-device timeseries in engineering units, the flow
    solution, and the per-term objective breakdown."""

    status: SolveStatus
    objective: float | None
    breakdown: dict[str, float]
    pv_p: dict[int, np.ndarray] = field(default_factory=dict)   # kW
    pv_q: dict[int, np.ndarray] = field(default_factory=dict)   # kvar
    bs_p: dict[int, np.ndarray] = field(default_factory=dict)   # kW net (+discharge)
    bs_q: dict[int, np.ndarray] = field(default_factory=dict)
    bs_soc: dict[int, np.ndarray] = field(default_factory=dict)  # fraction, H+1
    ev_p: dict[int, np.ndarray] = field(default_factory=dict)
    ev_q: dict[int, np.ndarray] = field(default_factory=dict)
    ev_soc: dict[int, np.ndarray] = field(default_factory=dict)
    hp_p: dict[int, np.ndarray] = field(default_factory=dict)   # kW (nonpositive)
    hp_t_in: dict[int, np.ndarray] = field(default_factory=dict)  # degC, H+1
    hp_mode: dict[int, list[str]] = field(default_factory=dict)
    flow: FlowSolution | None = None
    metrics: FlowMetrics | None = None
    solution: Solution | None = None
    cone_slack: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def physically_exact(self, tol: float = 1e-6) -> bool:
        """True when the relaxation cones closed, so flows are AC-physical."""
        return self.feasible and self.cone_slack <= tol

    @property
    def infeasible(self) -> bool:
        return self.status is SolveStatus.INFEASIBLE

    def to_json_dict(self) -> dict:
        def series(d):
            return {str(k): np.asarray(v).tolist() for k, v in d.items()}

        return {
            "status": self.status.value,
            "objective": self.objective,
            "breakdown": self.breakdown,
            "pv_p_kw": series(self.pv_p), "pv_q_kvar": series(self.pv_q),
            "bs_p_kw": series(self.bs_p), "bs_q_kvar": series(self.bs_q),
            "bs_soc": series(self.bs_soc),
            "ev_p_kw": series(self.ev_p), "ev_q_kvar": series(self.ev_q),
            "ev_soc": series(self.ev_soc),
            "hp_p_kw": series(self.hp_p), "hp_t_in": series(self.hp_t_in),
            "hp_mode": {str(k): v for k, v in self.hp_mode.items()},
        }


def _evaluate_breakdown(model: OpfModel, sol: Solution) -> dict[str, float]:
    net, scen, weights, H = model.net, model.scen, model.weights, model.horizon
    base, dt = net.base_kva, scen.dt
    alpha = scen.alpha_pv[:H]
    lam_int = scen.lmp[:H] * base * dt
    lam_bar = weights.lambda_bar if weights.lambda_bar is not None else float(np.mean(scen.lmp[:H]))
    lam_dev = lam_int - lam_bar * base * dt
    out = {k: 0.0 for k in ("curtailment", "losses", "coupling", "comfort",
                            "cycling_hp", "cycling_bs", "cycling_ev",
                            "soc_tracking", "import_cost")}
    l_vals = sol.take(model.flow_index.l)
    out["losses"] = weights.w_loss * float(sum(
        br.r * l_vals[k].sum() for k, br in enumerate(net.branches)))
    if weights.w_import:
        out["import_cost"] += weights.w_import * float(lam_int @ sol.take(model.flow_index.pcc_p))
    for bid, p_ids in model.pv_p.items():
        if model.allow_curtailment:
            cap_pu = model.fleet.pv[bid].p_max / base
            diff = sol.take(p_ids) - alpha * cap_pu
            out["curtailment"] += weights.w_curtail * float(diff @ diff)
    for bid, s in model.bs.items():
        p_net = sol.take(s.pd) - sol.take(s.pc)
        out["coupling"] += weights.w_couple_bs * float(alpha @ p_net)
        out["cycling_bs"] += weights.w_cycle_bs * float(np.sum(np.diff(p_net) ** 2))
        if weights.w_import:
            out["import_cost"] += -weights.w_import * float(lam_dev @ p_net)
    for bid, s in model.ev.items():
        p_net = sol.take(s.pd) - sol.take(s.pc)
        out["coupling"] += weights.w_couple_ev * float(alpha @ p_net)
        out["cycling_ev"] += weights.w_cycle_ev * float(np.sum(np.diff(p_net) ** 2))
        t_star = min(model.fleet.ev[bid].target_time, H)
        out["soc_tracking"] += weights.w_soc_track * float(
            (sol.value(s.soc[t_star]) - model.fleet.ev[bid].soc_target) ** 2)
    for bid, h in model.hp.items():
        temps = sol.take(h.t_in[1:])
        out["comfort"] += weights.w_comfort * float(
            np.sum((temps - model.fleet.hp[bid].t_set) ** 2))
        p = sol.take(h.p)
        out["cycling_hp"] += weights.w_cycle_hp * float(np.sum(np.diff(p) ** 2))
    return out


def solve_opf(model: OpfModel, gap_tol: float = 1e-4,
              warm: WarmStart | None = None, node_budget: int = 20000,
              tol: SolveTolerances | None = None) -> DispatchResult:
    """Solve the dispatch program and map values back to named device fields.

    An infeasible program is a meaningful outcome (the hosting-capacity loops
    consume it); indeterminate solver failures keep their status so callers
    can distinguish them from true infeasibility.
    """
    prog = model.program
    if prog.binary_ids:
        sol = solve_misocp(prog, gap_tol=gap_tol, warm=warm,
                           node_budget=node_budget, tol=tol)
    else:
        sol = solve_continuous(prog, tol=tol)
        sol.stats.setdefault("nodes", 1)
    if not sol.is_optimal:
        return DispatchResult(sol.status, None, {}, solution=sol)

    base = model.net.base_kva
    res = DispatchResult(sol.status, sol.objective, _evaluate_breakdown(model, sol),
                         solution=sol)
    for bid, ids in model.pv_p.items():
        res.pv_p[bid] = sol.take(ids) * base
        res.pv_q[bid] = sol.take(model.pv_q[bid]) * base
    for bid, s in model.bs.items():
        res.bs_p[bid] = (sol.take(s.pd) - sol.take(s.pc)) * base
        res.bs_q[bid] = sol.take(s.q) * base
        res.bs_soc[bid] = sol.take(s.soc)
    for bid, s in model.ev.items():
        res.ev_p[bid] = (sol.take(s.pd) - sol.take(s.pc)) * base
        res.ev_q[bid] = sol.take(s.q) * base
        res.ev_soc[bid] = sol.take(s.soc)
    for bid, h in model.hp.items():
        res.hp_p[bid] = sol.take(h.p) * base
        res.hp_t_in[bid] = sol.take(h.t_in)
        res.hp_mode[bid] = list(h.modes)
    res.flow = FlowSolution.extract(sol, model.flow_index)
    res.metrics = flow_metrics(res.flow, model.net)
    res.cone_slack = soc_tightness(prog, sol)
    return res


def objective_breakdown(result: DispatchResult) -> dict[str, float]:
    """Per-term objective map; the entries sum to the reported objective."""
    if not result.feasible:
        raise DeviceError("objective breakdown requires a feasible dispatch")
    return dict(result.breakdown)


def replay_states(result: DispatchResult, fleet: DerFleet, scen: ScenarioData) -> dict:
    """Re-simulate SOC and temperature trajectories from the dispatched powers
    through the device step functions; used to confirm model/dispatch
    coherence."""
    dt = scen.dt
    out: dict[str, dict[int, np.ndarray]] = {"bs_soc": {}, "ev_soc": {}, "hp_t_in": {}}
    for bid, p in result.bs_p.items():
        params = fleet.bs[bid]
        soc = np.empty(len(p) + 1)
        soc[0] = params.soc_init
        for t, val in enumerate(p):
            soc[t + 1] = battery_soc_step(params, soc[t], max(-val, 0.0), max(val, 0.0), dt)
        out["bs_soc"][bid] = soc
    for bid, p in result.ev_p.items():
        params = fleet.ev[bid]
        soc = np.empty(len(p) + 1)
        soc[0] = params.soc_init
        for t, val in enumerate(p):
            soc[t + 1] = battery_soc_step(params, soc[t], max(-val, 0.0), max(val, 0.0), dt)
        out["ev_soc"][bid] = soc
    for bid, p in result.hp_p.items():
        params = fleet.hp[bid]
        temps = np.empty(len(p) + 1)
        temps[0] = params.t_init
        for t, val in enumerate(p):
            temps[t + 1] = hp_temp_step(params, temps[t], float(scen.t_out[t]), min(val, 0.0),
                                        dt, mode=result.hp_mode[bid][t])
        out["hp_t_in"][bid] = temps
    return out
