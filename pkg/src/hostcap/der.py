"""DER device models: parameter records, state-transition functions, operating
envelopes, and the objective-term evaluators shared by the dispatch problems.

All parameter records are immutable and all functions here are pure, so they
can be used freely across parallel scenario evaluations.  Power sign
convention follows net injection: generation and discharging are positive,
consumption and charging are negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np


class DeviceError(ValueError):
    """Parameter or contract violation in a device model."""


@dataclass(frozen=True)
class PVParams:
    p_max: float            # kW rated capacity
    pf_min: float = 0.9     # minimum power factor of the smart inverter

    def __post_init__(self):
        if self.p_max < 0:
            raise DeviceError("PV p_max must be nonnegative")
        if not (0 < self.pf_min <= 1):
            raise DeviceError("PV pf_min must lie in (0, 1]")


@dataclass(frozen=True)
class BatteryParams:
    p_max: float            # kW charge = discharge rating
    e_max: float            # kWh energy capacity
    eta: float = 0.95       # charge/discharge efficiency
    delta: float = 0.0      # per-step self-discharge fraction
    soc_min: float = 0.1
    soc_max: float = 0.9
    soc_init: float = 0.5
    pf_min: float = 0.9

    def __post_init__(self):
        if not (0 <= self.soc_min <= self.soc_init <= self.soc_max <= 1):
            raise DeviceError("battery SOC bounds must satisfy 0 <= min <= init <= max <= 1")
        if not (0 < self.eta <= 1):
            raise DeviceError("battery efficiency must lie in (0, 1]")
        if not (0 <= self.delta < 1):
            raise DeviceError("battery self-discharge must lie in [0, 1)")
        if self.p_max <= 0 or self.e_max <= 0:
            raise DeviceError("battery power and energy ratings must be positive")
        if not (0 < self.pf_min <= 1):
            raise DeviceError("battery pf_min must lie in (0, 1]")


@dataclass(frozen=True)
class EVParams:
    charger_kw: float = 9.6     # bidirectional charger rating
    e_max: float = 70.0         # kWh
    away_start: int = 36        # first timestep away from home (closed interval)
    away_end: int = 68          # last timestep away from home
    soc_target: float = 0.9     # desired SOC ...
    target_time: int = 36       # ... at this timestep
    eta: float = 0.95
    delta: float = 0.0
    soc_min: float = 0.1
    soc_max: float = 0.9
    soc_init: float = 0.5
    pf_min: float = 0.9
    v2g: bool = True

    def __post_init__(self):
        if self.away_start > self.away_end:
            raise DeviceError("EV away window start must not exceed its end")
        if not (self.soc_min <= self.soc_target <= self.soc_max):
            raise DeviceError("EV soc_target must lie within the SOC bounds")
        if self.charger_kw <= 0:
            raise DeviceError("EV charger rating must be positive")
        if not (0 <= self.soc_min <= self.soc_init <= self.soc_max <= 1):
            raise DeviceError("EV SOC bounds must satisfy 0 <= min <= init <= max <= 1")
        if not (0 < self.eta <= 1) or not (0 <= self.delta < 1):
            raise DeviceError("EV efficiency/self-discharge out of range")


@dataclass(frozen=True)
class HPParams:
    p_rated: float = 5.6    # kW electrical rating (consumption)
    r_th: float = 2.0       # degC per kW thermal resistance
    c_th: float = 2.0       # kWh per degC thermal capacitance
    cop: float = 2.5        # coefficient of performance
    t_set: float = 22.5     # degC comfort setpoint
    t_min: float = 20.0
    t_max: float = 25.0
    ramp_frac: float = 0.3  # max per-step change as fraction of p_rated
    t_init: float = 22.5
    deadband: float = 0.3125  # degC; thermostat hysteresis width, kept for
    # reference only: the dispatch optimizer replaces the hysteresis controller

    def __post_init__(self):
        if not (self.t_min <= self.t_set <= self.t_max):
            raise DeviceError("HP setpoint must lie within the temperature bounds")
        if not (0 < self.ramp_frac <= 1):
            raise DeviceError("HP ramp fraction must lie in (0, 1]")
        if min(self.r_th, self.c_th, self.cop, self.p_rated) <= 0:
            raise DeviceError("HP thermal parameters and rating must be positive")

    @property
    def theta(self) -> float:
        """Per-step thermal decay for a step of one hour; use theta_for(dt)."""
        return self.theta_for(1.0)

    def theta_for(self, dt: float) -> float:
        return math.exp(-dt / (self.r_th * self.c_th))

    @property
    def rho(self) -> float:
        return self.r_th * self.cop


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights of the coordinated-dispatch cost terms.

    One weight per concept: curtailment, losses, PV-coupled charging, comfort
    tracking, the three cycling penalties, EV SOC tracking, and the PCC energy
    cost group (`w_import` scales both the price-weighted import term and the
    battery price-arbitrage alignment term).  `lambda_bar` defaults to the
    horizon mean of the price signal when unset.  Quadratic terms act on
    per-unit powers, degrees Celsius, and SOC fractions respectively.
    """

    w_curtail: float = 1.0
    w_loss: float = 1.0
    w_couple_bs: float = 0.05
    w_couple_ev: float = 0.05
    w_comfort: float = 0.1
    w_cycle_hp: float = 0.01
    w_cycle_bs: float = 0.01
    w_cycle_ev: float = 0.01
    w_soc_track: float = 1.0
    w_import: float = 1.0
    lambda_bar: float | None = None

    def __post_init__(self):
        for name in ("w_curtail", "w_loss", "w_couple_bs", "w_couple_ev", "w_comfort",
                     "w_cycle_hp", "w_cycle_bs", "w_cycle_ev", "w_soc_track", "w_import"):
            if getattr(self, name) < 0:
                raise DeviceError(f"objective weight {name} must be nonnegative")


@dataclass(frozen=True)
class DerFleet:
    """Per-bus placement of aggregate DER units, keyed by bus id."""

    pv: Mapping[int, PVParams] = field(default_factory=dict)
    bs: Mapping[int, BatteryParams] = field(default_factory=dict)
    ev: Mapping[int, EVParams] = field(default_factory=dict)
    hp: Mapping[int, HPParams] = field(default_factory=dict)

    def capacity_kw(self, der: str) -> float:
        if der == "pv":
            return sum(p.p_max for p in self.pv.values())
        if der == "bs":
            return sum(p.p_max for p in self.bs.values())
        if der == "ev":
            return sum(p.charger_kw for p in self.ev.values())
        if der == "hp":
            return sum(p.p_rated for p in self.hp.values())
        raise DeviceError(f"unknown DER type {der!r}")

    def nodal_capacity(self, der: str, bus_id: int) -> float:
        table = getattr(self, der)
        if bus_id not in table:
            return 0.0
        p = table[bus_id]
        return {"pv": getattr(p, "p_max", 0.0), "bs": getattr(p, "p_max", 0.0),
                "ev": getattr(p, "charger_kw", 0.0), "hp": getattr(p, "p_rated", 0.0)}[der]

    def merged_with(self, other: "DerFleet") -> "DerFleet":
        """Union of placements; `other` wins on shared buses."""
        return DerFleet(
            pv={**self.pv, **other.pv},
            bs={**self.bs, **other.bs},
            ev={**self.ev, **other.ev},
            hp={**self.hp, **other.hp},
        )


DER_TYPES = ("pv", "bs", "ev", "hp")


# -- device defaults -----------------------------------------------------------

BATTERY_DURATION_H = 3.0  # residential batteries sized at a 3-hour duration


def default_battery(p_max: float, **overrides) -> BatteryParams:
    return BatteryParams(p_max=p_max, e_max=BATTERY_DURATION_H * p_max, **overrides)


def default_ev(**overrides) -> EVParams:
    return EVParams(**overrides)


def default_hp(**overrides) -> HPParams:
    return HPParams(**overrides)


# -- state transitions ---------------------------------------------------------

def battery_soc_step(params: BatteryParams, soc: float, p_charge: float,
                     p_discharge: float, dt: float) -> float:
    """One step of the SOC recurrence; no clamping, bound enforcement is the
    optimizer's job."""
    if p_charge < 0 or p_discharge < 0:
        raise DeviceError("charge and discharge powers must be nonnegative")
    if p_charge > 0 and p_discharge > 0:
        raise DeviceError("simultaneous charge and discharge is not allowed")
    return (1.0 - params.delta) * soc + (dt / params.e_max) * (
        p_charge * params.eta - p_discharge / params.eta)


def hp_temp_step(params: HPParams, t_in: float, t_out: float, p_hp: float,
                 dt: float, mode: str = "auto") -> float:
    """One step of the building thermal recurrence.

    `p_hp` is the (nonpositive) electrical injection.  In `auto` mode the unit
    cools when the outdoor temperature exceeds the indoor one and heats when
    below; at a tie the two branches coincide for p_hp = 0 and the cooling
    branch is used.  Dispatch problems resolve the mode from exogenous data
    and replay should pass it explicitly.
    """
    if p_hp > 1e-12 or p_hp < -params.p_rated - 1e-9:
        raise DeviceError("HP power must lie in [-p_rated, 0]")
    if dt <= 0:
        raise DeviceError("dt must be positive")
    theta = params.theta_for(dt)
    rho = params.rho
    if mode == "auto":
        mode = "cool" if t_out >= t_in else "heat"
    if mode == "cool":
        drive = t_out + rho * p_hp
    elif mode == "heat":
        drive = t_out - rho * p_hp
    else:
        raise DeviceError(f"unknown HP mode {mode!r}")
    return theta * t_in + (1.0 - theta) * drive


def pf_q_bounds(p: float, pf_min: float) -> tuple[float, float]:
    """Symmetric reactive envelope from variable power-factor control."""
    if p < 0:
        raise DeviceError("active power magnitude must be nonnegative")
    if not (0 < pf_min <= 1):
        raise DeviceError("pf_min must lie in (0, 1]")
    q = p * math.tan(math.acos(pf_min))
    return (-q, q)


def ev_available(params: EVParams, t: int) -> bool:
    """False inside the closed away window [away_start, away_end]."""
    return not (params.away_start <= t <= params.away_end)


# -- objective-term evaluators ---------------------------------------------------

def cycling_cost(series, weight: float) -> float:
    """weight * sum of squared successive power changes."""
    arr = np.asarray(series, dtype=float)
    if arr.size < 2:
        raise DeviceError("cycling cost needs at least two samples")
    return float(weight * np.sum(np.diff(arr) ** 2))


def comfort_cost(temps, t_set: float, weight: float) -> float:
    """weight * sum of squared setpoint deviations."""
    arr = np.asarray(temps, dtype=float)
    return float(weight * np.sum((arr - t_set) ** 2))


def scaled_battery(template: BatteryParams, p_max: float, e_max: float) -> BatteryParams:
    return replace(template, p_max=p_max, e_max=e_max)


def scaled_ev(template: EVParams, charger_kw: float, e_max: float) -> EVParams:
    return replace(template, charger_kw=charger_kw, e_max=e_max)


def scaled_hp(template: HPParams, p_rated: float) -> HPParams:
    return replace(template, p_rated=p_rated)
