"""Deterministic iterative hosting-capacity search.

Penetration of the target DER rises in fixed increments; each level builds
the fleet (nested allocations, so capacity at one level contains the previous
level), evaluates grid feasibility in static or dynamic mode, records the
flow metrics, and stops at the first infeasible level.  The last feasible
level is the hosting capacity.

PV and battery penetration is expressed relative to the feeder peak load with
no cap; heat-pump and EV penetration is the share of electrified homes, at
most 100 percent.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .der import (
    BatteryParams,
    DerFleet,
    DeviceError,
    EVParams,
    HPParams,
    ObjectiveWeights,
    PVParams,
    default_battery,
    default_ev,
    default_hp,
    scaled_ev,
    scaled_hp,
)
from .network import Network, feeder_peak_load
from .opf import assemble_opf, solve_opf
from .powerflow import Feasibility, FlowMetrics, static_feasible
from .profiles import ScenarioData

HOME_BASED = ("hp", "ev")
LOAD_BASED = ("pv", "bs")


class HcaError(ValueError):
    pass


@dataclass(frozen=True)
class HcaConfig:
    target_der: str = "pv"                 # pv | hp | ev
    mode: str = "static"                   # static | dynamic
    step: float = 1.0                      # percentage points per iteration
    start: float | None = None             # defaults to one step
    max_penetration: float = 400.0         # search ceiling (100 for hp/ev)
    fixed: dict = field(default_factory=dict)   # other DERs, pct by type
    policy: str = "proportional"           # proportional | uniform
    seed: int = 0
    time_window: tuple[int, int] | None = None  # static-mode slice, steps
    exactness_tol: float = 1e-6
    gap_tol: float = 1e-4
    peak_kw: float | None = None
    pf_min: float = 0.9
    battery_template: BatteryParams | None = None
    ev_template: EVParams | None = None
    hp_template: HPParams | None = None

    def __post_init__(self):
        if self.step <= 0:
            raise HcaError("step must be positive")
        if self.target_der not in ("pv", "hp", "ev"):
            raise HcaError(f"unsupported target DER {self.target_der!r}")
        if self.mode not in ("static", "dynamic"):
            raise HcaError(f"unknown mode {self.mode!r}")
        for der, pct in self.fixed.items():
            if der in HOME_BASED and not (0 <= pct <= 100):
                raise HcaError(f"fixed {der} penetration must lie in [0, 100]")
            if der in LOAD_BASED and pct < 0:
                raise HcaError(f"fixed {der} penetration must be nonnegative")


@dataclass
class LevelRecord:
    level_pct: float
    feasible: bool
    metrics: FlowMetrics | None

    def csv_row(self) -> tuple:
        m = self.metrics
        if m is None:
            return (self.level_pct, self.feasible) + (float("nan"),) * 6
        return (self.level_pct, self.feasible, m.v_min, m.v_max, m.v_mean,
                m.v_median, m.i_max_pct, m.i_mean_pct)


@dataclass
class HcaTrace:
    records: list[LevelRecord]
    final_hc: float
    aborted: bool = False

    CSV_HEADER = ("level_pct", "feasible", "vmin", "vmax", "vmean", "vmedian",
                  "imax_pct", "imean_pct")

    @property
    def levels(self) -> list[float]:
        return [r.level_pct for r in self.records]


def _eligible_load_buses(net: Network) -> list:
    return [b for b in net.buses if not b.is_slack]


def _home_slots(net: Network, seed: int) -> list[int]:
    """Deterministic shuffled list of (bus id per home); nested allocations
    electrify a prefix of this list."""
    slots: list[int] = []
    for b in net.buses:
        if not b.is_slack:
            slots.extend([b.id] * b.houses)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(slots))
    return [slots[i] for i in order]


def allocate_capacity(net: Network, target_der: str, penetration: float,
                      policy: str = "proportional", seed: int = 0,
                      peak_kw: float | None = None,
                      pf_min: float = 0.9,
                      battery_template: BatteryParams | None = None,
                      ev_template: EVParams | None = None,
                      hp_template: HPParams | None = None) -> DerFleet:
    """Fleet delta implementing one penetration level of a single DER type.

    PV/BS capacity totals penetration * feeder peak, spread proportionally to
    nominal nodal load or uniformly; HP/EV electrify round(penetration *
    total homes) homes drawn from a seeded shuffle weighted by homes per bus.
    Allocations are nested across levels for a fixed seed.
    """
    if target_der in HOME_BASED and not (0 <= penetration <= 100):
        raise HcaError(f"{target_der} penetration {penetration} outside [0, 100]")
    if penetration < 0:
        raise HcaError("penetration must be nonnegative")
    buses = _eligible_load_buses(net)
    if target_der in LOAD_BASED:
        if peak_kw is None:
            raise HcaError("peak_kw is required for load-based allocation")
        total_kw = penetration / 100.0 * peak_kw
        if policy == "proportional":
            weights = np.array([b.nominal_load_p for b in buses])
            if weights.sum() <= 0:
                raise HcaError("proportional policy needs nonzero nominal loads")
        elif policy == "uniform":
            weights = np.ones(len(buses))
        else:
            raise HcaError(f"unknown allocation policy {policy!r}")
        weights = weights / weights.sum()
        caps = {b.id: total_kw * w for b, w in zip(buses, weights) if w > 0}
        if target_der == "pv":
            return DerFleet(pv={i: PVParams(p_max=c, pf_min=pf_min) for i, c in caps.items()})
        template = battery_template
        bs = {}
        for i, c in caps.items():
            if template is None:
                bs[i] = default_battery(c, pf_min=pf_min)
            else:
                bs[i] = dataclasses.replace(template, p_max=c,
                                            e_max=c * template.e_max / template.p_max)
        return DerFleet(bs=bs)

    # home-based DERs: electrify a prefix of the shuffled home list
    slots = _home_slots(net, seed)
    n_homes = int(round(penetration / 100.0 * len(slots)))
    counts: dict[int, int] = {}
    for bus_id in slots[:n_homes]:
        counts[bus_id] = counts.get(bus_id, 0) + 1
    if target_der == "hp":
        template = hp_template or default_hp()
        return DerFleet(hp={i: scaled_hp(_aggregate_hp(template, n), template.p_rated * n)
                            for i, n in counts.items()})
    template = ev_template or default_ev()
    return DerFleet(ev={i: scaled_ev(template, template.charger_kw * n, template.e_max * n)
                        for i, n in counts.items()})


def _aggregate_hp(template: HPParams, n_units: float) -> HPParams:
    """n identical buildings as one thermal aggregate: capacitance scales up,
    resistance down, so the time constant and per-unit behavior are kept."""
    if n_units <= 0:
        raise HcaError("aggregate needs a positive unit count")
    return dataclasses.replace(template, r_th=template.r_th / n_units,
                               c_th=template.c_th * n_units)


def build_fleet(net: Network, cfg: HcaConfig, target_pct: float, peak_kw: float) -> DerFleet:
    fleet = DerFleet()
    for der, pct in sorted(cfg.fixed.items()):
        if der == cfg.target_der:
            raise HcaError(f"fixed penetration given for the target DER {der}")
        if pct > 0:
            fleet = fleet.merged_with(allocate_capacity(
                net, der, pct, cfg.policy, cfg.seed, peak_kw, cfg.pf_min,
                cfg.battery_template, cfg.ev_template, cfg.hp_template))
    if target_pct > 0:
        fleet = fleet.merged_with(allocate_capacity(
            net, cfg.target_der, target_pct, cfg.policy, cfg.seed, peak_kw,
            cfg.pf_min, cfg.battery_template, cfg.ev_template, cfg.hp_template))
    return fleet


def penetration_of(fleet: DerFleet, net: Network, peak_kw: float | None = None) -> dict[str, float]:
    """Installed penetration by DER type: PV/BS relative to the feeder peak
    (uncapped), HP/EV as share of electrified homes."""
    peak = peak_kw if peak_kw is not None else net.total_nominal_load
    homes = net.total_houses
    out = {}
    out["pv"] = 100.0 * fleet.capacity_kw("pv") / peak if peak > 0 else 0.0
    out["bs"] = 100.0 * fleet.capacity_kw("bs") / peak if peak > 0 else 0.0
    hp_template = default_hp()
    ev_template = default_ev()
    hp_units = sum(p.p_rated for p in fleet.hp.values()) / hp_template.p_rated
    ev_units = sum(p.charger_kw for p in fleet.ev.values()) / ev_template.charger_kw
    out["hp"] = 100.0 * hp_units / homes if homes else 0.0
    out["ev"] = 100.0 * ev_units / homes if homes else 0.0
    return out


def evaluate_level(net: Network, cfg: HcaConfig, scen: ScenarioData,
                   fleet: DerFleet, weights: ObjectiveWeights) -> tuple[Feasibility, FlowMetrics | None]:
    if cfg.mode == "static":
        res = static_feasible(net, scen, fleet, time_window=cfg.time_window)
        return res.verdict, res.metrics
    model = assemble_opf(net, fleet, scen, weights=weights, allow_curtailment=False)
    res = solve_opf(model, gap_tol=cfg.gap_tol)
    if res.infeasible:
        return Feasibility.INFEASIBLE, None
    if not res.feasible:
        return Feasibility.INDETERMINATE, None
    if res.cone_slack > cfg.exactness_tol:
        # relaxation did not close: no certified physical dispatch at this level
        return Feasibility.INFEASIBLE, res.metrics
    return Feasibility.FEASIBLE, res.metrics


def run_deterministic_hca(net: Network, cfg: HcaConfig, scen: ScenarioData,
                          weights: ObjectiveWeights | None = None) -> HcaTrace:
    """Raise the target DER stepwise until the grid check fails.

    The trace keeps every probed level with its metrics, including the first
    infeasible probe; an indeterminate solver outcome aborts the run and
    returns the partial trace.
    """
    weights = weights or ObjectiveWeights()
    scen.validate(net)
    peak = cfg.peak_kw if cfg.peak_kw is not None else feeder_peak_load(net, scen.fixed_load_p)
    ceiling = min(cfg.max_penetration, 100.0) if cfg.target_der in HOME_BASED \
        else cfg.max_penetration
    records: list[LevelRecord] = []
    final_hc = 0.0
    level = cfg.start if cfg.start is not None else cfg.step
    while level <= ceiling + 1e-9:
        fleet = build_fleet(net, cfg, level, peak)
        verdict, metrics = evaluate_level(net, cfg, scen, fleet, weights)
        if verdict is Feasibility.INDETERMINATE:
            return HcaTrace(records, final_hc, aborted=True)
        feasible = verdict is Feasibility.FEASIBLE
        records.append(LevelRecord(level, feasible, metrics))
        if not feasible:
            break
        final_hc = level
        level = round(level + cfg.step, 9)
    return HcaTrace(records, final_hc)
