"""Radial distribution network model, JSON ingestion, and topology orderings.

A network is a tree rooted at the single slack bus (the substation / PCC).
Branch impedances and ratings are stored in per-unit on the network's own
base; bus voltage bounds are given as magnitudes in files and squared on
demand, since the branch-flow formulation works with squared voltages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NetworkError(ValueError):
    """Validation failure; the message names the offending element."""


DEFAULT_V_MIN_PU = 0.95
DEFAULT_V_MAX_PU = 1.05


@dataclass(frozen=True)
class Bus:
    id: int
    name: str
    nominal_load_p: float = 0.0  # kW
    nominal_load_q: float = 0.0  # kvar
    v_min_pu: float = DEFAULT_V_MIN_PU
    v_max_pu: float = DEFAULT_V_MAX_PU
    houses: int = 0
    is_slack: bool = False

    @property
    def v_min_sq(self) -> float:
        return self.v_min_pu ** 2

    @property
    def v_max_sq(self) -> float:
        return self.v_max_pu ** 2

    def validate(self) -> None:
        if not (self.v_min_pu > 0):
            raise NetworkError(f"bus {self.id}: v_min must be positive")
        if not (self.v_min_pu < self.v_max_pu):
            raise NetworkError(f"bus {self.id}: v_min must be below v_max")
        if self.houses < 0:
            raise NetworkError(f"bus {self.id}: negative house count")
        for f in ("nominal_load_p", "nominal_load_q", "v_min_pu", "v_max_pu"):
            if not math.isfinite(getattr(self, f)):
                raise NetworkError(f"bus {self.id}: non-finite {f}")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float  # pu
    x: float  # pu
    s_max: float  # pu apparent power rating

    def validate(self) -> None:
        if self.from_bus == self.to_bus:
            raise NetworkError(f"branch {self.from_bus}->{self.to_bus}: self-loop")
        if self.r < 0:
            raise NetworkError(f"branch {self.from_bus}->{self.to_bus}: negative resistance")
        if not (self.s_max > 0):
            raise NetworkError(f"branch {self.from_bus}->{self.to_bus}: s_max must be positive")
        for f in ("r", "x", "s_max"):
            if not math.isfinite(getattr(self, f)):
                raise NetworkError(f"branch {self.from_bus}->{self.to_bus}: non-finite {f}")


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_kva: float = 1000.0
    base_kv: float = 4.16
    s_tran: float = 10.0  # pu transformer rating
    pcc_p_min: float = -100.0
    pcc_p_max: float = 100.0
    pcc_q_min: float = -100.0
    pcc_q_max: float = 100.0

    def __post_init__(self):
        validate_network(self)

    # -- lookups -------------------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.is_slack)

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._index_of()[bus_id]
        except KeyError:
            raise NetworkError(f"unknown bus id {bus_id}") from None

    def _index_of(self) -> dict[int, int]:
        cache = getattr(self, "_idx_cache", None)
        if cache is None:
            cache = {b.id: i for i, b in enumerate(self.buses)}
            object.__setattr__(self, "_idx_cache", cache)
        return cache

    def kw_to_pu(self, kw) -> np.ndarray | float:
        return np.asarray(kw, dtype=float) / self.base_kva if np.ndim(kw) else float(kw) / self.base_kva

    def pu_to_kw(self, pu) -> np.ndarray | float:
        return np.asarray(pu, dtype=float) * self.base_kva if np.ndim(pu) else float(pu) * self.base_kva

    @property
    def total_houses(self) -> int:
        return sum(b.houses for b in self.buses)

    @property
    def total_nominal_load(self) -> float:
        return sum(b.nominal_load_p for b in self.buses)


@dataclass(frozen=True)
class TopologyOrder:
    """Depth ordering of a network tree rooted at the slack bus.

    `parent[j]` is the branch index feeding bus index j (-1 for slack);
    `children[i]` lists branch indices leaving bus index i; `order` lists bus
    indices in nondecreasing depth, slack first.
    """

    parent: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    order: tuple[int, ...]


def validate_network(net: Network) -> None:
    seen: set[int] = set()
    slack_ids = []
    for b in net.buses:
        b.validate()
        if b.id in seen:
            raise NetworkError(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if b.is_slack:
            slack_ids.append(b.id)
    if len(slack_ids) != 1:
        raise NetworkError(f"exactly one slack bus required, found {len(slack_ids)}")
    if len(net.branches) != len(net.buses) - 1:
        raise NetworkError(
            f"radial network needs {len(net.buses) - 1} branches, found {len(net.branches)}")
    for br in net.branches:
        br.validate()
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise NetworkError(f"branch {br.from_bus}->{br.to_bus}: unknown bus {end}")
    if net.base_kva <= 0 or net.base_kv <= 0:
        raise NetworkError("per-unit bases must be positive")
    # connectivity + acyclicity from the slack by undirected traversal
    adj: dict[int, list[tuple[int, int]]] = {b.id: [] for b in net.buses}
    for k, br in enumerate(net.branches):
        adj[br.from_bus].append((br.to_bus, k))
        adj[br.to_bus].append((br.from_bus, k))
    root = slack_ids[0]
    visited = {root}
    used_branches: set[int] = set()
    stack = [root]
    while stack:
        u = stack.pop()
        for v, k in adj[u]:
            if k in used_branches:
                continue
            if v in visited:
                br = net.branches[k]
                raise NetworkError(
                    f"cycle detected at branch {br.from_bus}->{br.to_bus}")
            visited.add(v)
            used_branches.add(k)
            stack.append(v)
    if len(visited) != len(net.buses):
        missing = sorted(seen - visited)
        raise NetworkError(f"buses not reachable from slack: {missing}")


def topology_order(net: Network) -> TopologyOrder:
    """Orient every branch away from the slack and list buses by depth."""
    idx = {b.id: i for i, b in enumerate(net.buses)}
    adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(net.n_bus)}
    for k, br in enumerate(net.branches):
        adj[idx[br.from_bus]].append((idx[br.to_bus], k))
        adj[idx[br.to_bus]].append((idx[br.from_bus], k))
    root = idx[net.slack.id]
    parent = [-1] * net.n_bus
    children: list[list[int]] = [[] for _ in range(net.n_bus)]
    order = [root]
    seen = {root}
    q = [root]
    while q:
        u = q.pop(0)
        for v, k in sorted(adj[u], key=lambda vk: net.buses[vk[0]].id):
            if v in seen:
                continue
            seen.add(v)
            parent[v] = k
            children[u].append(k)
            order.append(v)
            q.append(v)
    return TopologyOrder(tuple(parent), tuple(tuple(c) for c in children), tuple(order))


def branch_direction(net: Network, order: TopologyOrder) -> list[tuple[int, int]]:
    """Per branch (upstream bus index, downstream bus index) under `order`."""
    idx = {b.id: i for i, b in enumerate(net.buses)}
    out = []
    for k, br in enumerate(net.branches):
        i, j = idx[br.from_bus], idx[br.to_bus]
        if order.parent[j] == k:
            out.append((i, j))
        else:
            out.append((j, i))
    return out


def feeder_peak_load(net: Network, load_p_kw: np.ndarray) -> float:
    """Peak over time of the summed bus active loads, in kW.

    `load_p_kw` has shape (n_bus, n_steps) in bus order; this is the
    denominator used to express PV and battery penetration.
    """
    arr = np.asarray(load_p_kw, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != net.n_bus:
        raise NetworkError(
            f"load profile shape {arr.shape} does not cover all {net.n_bus} buses")
    return float(arr.sum(axis=0).max())


# -- JSON ingestion -----------------------------------------------------------

def network_from_dict(data: dict) -> Network:
    try:
        buses = []
        for rec in data["buses"]:
            slack = bool(rec.get("slack", False))
            # slack voltage is regulated: pin it to 1 pu unless the file says otherwise
            default_lo = 1.0 if slack else DEFAULT_V_MIN_PU
            default_hi = 1.0 + 1e-9 if slack else DEFAULT_V_MAX_PU
            buses.append(Bus(
                id=int(rec["id"]),
                name=str(rec.get("name", f"bus{rec['id']}")),
                nominal_load_p=float(rec.get("load_p_kw", 0.0)),
                nominal_load_q=float(rec.get("load_q_kvar", 0.0)),
                v_min_pu=float(rec.get("v_min_pu", default_lo)),
                v_max_pu=float(rec.get("v_max_pu", default_hi)),
                houses=int(rec.get("houses", 0)),
                is_slack=slack,
            ))
        branches = [Branch(
            from_bus=int(rec["from"]),
            to_bus=int(rec["to"]),
            r=float(rec["r_pu"]),
            x=float(rec["x_pu"]),
            s_max=float(rec["s_max_pu"]),
        ) for rec in data["branches"]]
        pcc = data.get("pcc", {})
        return Network(
            buses=tuple(buses),
            branches=tuple(branches),
            base_kva=float(data.get("base_kva", 1000.0)),
            base_kv=float(data.get("base_kv", 4.16)),
            s_tran=float(data.get("s_tran", 10.0)),
            pcc_p_min=float(pcc.get("p_min", -100.0)),
            pcc_p_max=float(pcc.get("p_max", 100.0)),
            pcc_q_min=float(pcc.get("q_min", -100.0)),
            pcc_q_max=float(pcc.get("q_max", 100.0)),
        )
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network description: {exc}") from exc


def network_to_dict(net: Network) -> dict:
    buses = []
    for b in net.buses:
        buses.append({
            "id": b.id, "name": b.name,
            "load_p_kw": b.nominal_load_p, "load_q_kvar": b.nominal_load_q,
            "v_min_pu": b.v_min_pu, "v_max_pu": b.v_max_pu,
            "houses": b.houses, "slack": b.is_slack,
        })
    return {
        "base_kva": net.base_kva, "base_kv": net.base_kv, "s_tran": net.s_tran,
        "pcc": {"p_min": net.pcc_p_min, "p_max": net.pcc_p_max,
                "q_min": net.pcc_q_min, "q_max": net.pcc_q_max},
        "buses": buses,
        "branches": [{"from": br.from_bus, "to": br.to_bus, "r_pu": br.r,
                      "x_pu": br.x, "s_max_pu": br.s_max} for br in net.branches],
    }


def parse_network(path: str | Path) -> Network:
    """Load and validate a network from its JSON description.

    Unbalanced multiphase descriptions are not accepted; data must already be
    an equivalent balanced single-phase model.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(data, dict) and data.get("phases", 1) not in (1, "1", "balanced"):
        raise NetworkError(f"{path}: multiphase data rejected; convert to a balanced equivalent first")
    return network_from_dict(data)


def write_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")
