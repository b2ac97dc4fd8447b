"""Timeseries bundles consumed by the power-flow and dispatch problems.

A :class:`ScenarioData` carries one realization of every exogenous channel:
solar availability, outdoor temperature, prices, fixed loads, and the
uncoordinated baseline DER profiles used by the static (inflexible) case.
Baseline DER profiles are stored normalized per kW of installed capacity, so
injections scale linearly with whatever fleet is under study: batteries and
EVs in [-1, 1] (positive discharging), heat pumps in [-1, 0].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .der import BatteryParams, EVParams, HPParams, ev_available, hp_temp_step
from .network import Network


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioData:
    dt: float                     # hours per step
    alpha_pv: np.ndarray          # (H,) solar availability in [0, 1]
    t_out: np.ndarray             # (H,) outdoor temperature, degC, common to all buses
    lmp: np.ndarray               # (H,) price signal, $/kWh
    fixed_load_p: np.ndarray      # (n_bus, H) consumption, kW, nonnegative
    fixed_load_q: np.ndarray     # (n_bus, H) consumption, kvar, nonnegative
    baseline_bs: np.ndarray       # (n_bus, H) normalized battery injection per kW installed
    baseline_ev: np.ndarray       # (n_bus, H) normalized EV injection per kW installed
    baseline_hp: np.ndarray       # (n_bus, H) normalized HP injection per kW installed
    probability: float = 1.0

    @property
    def horizon(self) -> int:
        return int(self.alpha_pv.shape[0])

    def validate(self, net: Network | None = None) -> None:
        H = self.horizon
        for name in ("alpha_pv", "t_out", "lmp"):
            if getattr(self, name).shape != (H,):
                raise ProfileError(f"{name} must have shape ({H},)")
        n = self.fixed_load_p.shape[0]
        for name in ("fixed_load_p", "fixed_load_q", "baseline_bs", "baseline_ev", "baseline_hp"):
            if getattr(self, name).shape != (n, H):
                raise ProfileError(f"{name} must have shape ({n}, {H})")
        if net is not None and n != net.n_bus:
            raise ProfileError(f"profiles cover {n} buses but the network has {net.n_bus}")
        if self.dt <= 0:
            raise ProfileError("dt must be positive")
        if np.any(self.alpha_pv < -1e-12) or np.any(self.alpha_pv > 1 + 1e-12):
            raise ProfileError("alpha_pv must lie in [0, 1]")
        if np.any(self.fixed_load_p < -1e-9):
            raise ProfileError("fixed loads must be nonnegative consumption")
        for name in ("alpha_pv", "t_out", "lmp", "fixed_load_p", "fixed_load_q",
                     "baseline_bs", "baseline_ev", "baseline_hp"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ProfileError(f"{name} contains non-finite values")

    def with_probability(self, p: float) -> "ScenarioData":
        return replace(self, probability=float(p))

    def channel_arrays(self) -> dict[str, np.ndarray]:
        return {
            "alpha_pv": self.alpha_pv, "t_out": self.t_out, "lmp": self.lmp,
            "fixed_load_p": self.fixed_load_p, "fixed_load_q": self.fixed_load_q,
            "baseline_bs": self.baseline_bs, "baseline_ev": self.baseline_ev,
            "baseline_hp": self.baseline_hp,
        }


def zero_scenario(net: Network, horizon: int, dt: float = 1.0) -> ScenarioData:
    n = net.n_bus
    z = lambda: np.zeros((n, horizon))  # noqa: E731
    return ScenarioData(dt, np.zeros(horizon), np.full(horizon, 22.5),
                        np.zeros(horizon), z(), z(), z(), z(), z())


# -- synthetic day shapes --------------------------------------------------------

def solar_shape(horizon: int, dt: float, peak: float = 1.0) -> np.ndarray:
    """Bell-shaped availability centered on local noon."""
    hours = (np.arange(horizon) + 0.5) * dt
    alpha = peak * np.exp(-0.5 * ((hours - 12.0) / 2.6) ** 2)
    alpha[(hours < 6.0) | (hours > 18.5)] = 0.0
    return np.clip(alpha, 0.0, 1.0)


def load_shape(horizon: int, dt: float) -> np.ndarray:
    """Residential double-hump with the evening peak at 1.0."""
    hours = (np.arange(horizon) + 0.5) * dt
    morning = 0.45 * np.exp(-0.5 * ((hours - 7.5) / 1.8) ** 2)
    evening = 0.72 * np.exp(-0.5 * ((hours - 19.0) / 2.2) ** 2)
    shape = 0.28 + morning + evening
    return shape / shape.max()


def price_shape(horizon: int, dt: float, low: float = 0.02, high: float = 0.14) -> np.ndarray:
    """Duck-curve price signal: cheap midday, expensive evening."""
    hours = (np.arange(horizon) + 0.5) * dt
    midday_dip = np.exp(-0.5 * ((hours - 12.5) / 2.5) ** 2)
    evening_peak = np.exp(-0.5 * ((hours - 19.0) / 1.8) ** 2)
    lam = 0.06 - 0.04 * midday_dip + (high - 0.06) * evening_peak
    return np.clip(lam, low, None)


def temperature_shape(horizon: int, dt: float, low: float = 21.0, high: float = 24.0) -> np.ndarray:
    hours = (np.arange(horizon) + 0.5) * dt
    return low + (high - low) * 0.5 * (1 - np.cos(2 * np.pi * (hours - 4.0) / 24.0))


def synthetic_day(net: Network, horizon: int = 24, dt: float = 1.0,
                  load_scale: float = 1.0,
                  t_out_low: float = 21.0, t_out_high: float = 24.0,
                  with_der_baselines: bool = False,
                  bs_template: BatteryParams | None = None,
                  ev_template: EVParams | None = None,
                  hp_template: HPParams | None = None) -> ScenarioData:
    """One representative day for a network: loads at each bus follow the
    residential shape scaled by the bus's nominal load; DER baselines default
    to idle (zero) unless `with_der_baselines` is set."""
    n = net.n_bus
    shape = load_shape(horizon, dt)
    load_p = np.array([b.nominal_load_p * load_scale * shape for b in net.buses])
    load_q = np.array([b.nominal_load_q * load_scale * shape for b in net.buses])
    alpha = solar_shape(horizon, dt)
    t_out = temperature_shape(horizon, dt, t_out_low, t_out_high)
    scen = ScenarioData(dt, alpha, t_out, price_shape(horizon, dt),
                        load_p, load_q, np.zeros((n, horizon)),
                        np.zeros((n, horizon)), np.zeros((n, horizon)))
    if with_der_baselines:
        bs = myopic_battery_profile(alpha, shape, bs_template or BatteryParams(5.0, 15.0), dt)
        ev = overnight_ev_profile(ev_template or EVParams(), horizon, dt)
        hp = thermostat_hp_profile(hp_template or HPParams(), t_out, dt)
        scen = replace(scen,
                       baseline_bs=np.tile(bs, (n, 1)),
                       baseline_ev=np.tile(ev, (n, 1)),
                       baseline_hp=np.tile(hp, (n, 1)))
    scen.validate(net)
    return scen


# -- uncoordinated baseline controllers -------------------------------------------

def myopic_battery_profile(alpha: np.ndarray, load_shape_arr: np.ndarray,
                           params: BatteryParams, dt: float) -> np.ndarray:
    """Self-consumption battery: charge while solar availability is above its
    daily mean, discharge during above-average load, respecting SOC limits but
    ignoring the rest of the network and the future.  Returned profile is
    normalized per kW of rated power."""
    H = len(alpha)
    duration = params.e_max / params.p_max
    soc = params.soc_init
    out = np.zeros(H)
    a_thr = alpha.mean()
    l_thr = load_shape_arr.mean()
    for t in range(H):
        p = 0.0
        if alpha[t] > a_thr and soc < params.soc_max - 1e-9:
            headroom = (params.soc_max - soc) * duration / dt / params.eta
            p = -min(1.0, headroom)  # charging
        elif load_shape_arr[t] > l_thr and soc > params.soc_min + 1e-9:
            stock = (soc - params.soc_min) * duration / dt * params.eta
            p = min(1.0, stock)      # discharging
        soc = (1 - params.delta) * soc + (dt / duration) * (
            max(-p, 0.0) * params.eta - max(p, 0.0) / params.eta)
        out[t] = p
    return out


def overnight_ev_profile(params: EVParams, horizon: int, dt: float) -> np.ndarray:
    """Charge at full rate after returning home until the SOC target is met;
    zero while away.  Normalized per kW of charger rating."""
    duration = params.e_max / params.charger_kw
    soc = params.soc_init
    out = np.zeros(horizon)
    for t in range(horizon):
        p = 0.0
        if ev_available(params, t) and t > params.away_end and soc < params.soc_target - 1e-9:
            need = (params.soc_target - soc) * duration / dt / params.eta
            p = -min(1.0, need)
        soc += (dt / duration) * (max(-p, 0.0) * params.eta)
        out[t] = p
    return out


def thermostat_hp_profile(params: HPParams, t_out: np.ndarray, dt: float) -> np.ndarray:
    """Deadband thermostat on the reference unit, normalized per kW rated."""
    H = len(t_out)
    t_in = params.t_init
    running = False
    out = np.zeros(H)
    for t in range(H):
        cooling = t_out[t] >= params.t_set
        err = (t_in - params.t_set) if cooling else (params.t_set - t_in)
        if err > params.deadband / 2:
            running = True
        elif err < -params.deadband / 2:
            running = False
        p = -1.0 if running else 0.0
        mode = "cool" if cooling else "heat"
        t_in = hp_temp_step(params, t_in, float(t_out[t]), p * params.p_rated, dt, mode=mode)
        out[t] = p
    return out
