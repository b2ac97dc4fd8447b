"""Bundled teaching feeders for desk-scale runs and hermetic tests.

The 2/3/4-bus feeders are small enough for closed-form cross-checks; the
123-bus feeder is a synthetic radial system sized like a mid-scale suburban
network (about 8 houses per node) for exercising the tooling at a realistic
node count.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import Branch, Bus, Network, network_to_dict

DATA_DIR = Path(__file__).parent / "data"


def two_bus(load_kw: float = 100.0, load_kvar: float = 20.0,
            r: float = 0.01, x: float = 0.02, s_max: float = 2.0,
            base_kva: float = 1000.0, houses: int = 8,
            v_max_pu: float = 1.05) -> Network:
    return Network(
        buses=(
            Bus(1, "substation", is_slack=True, v_min_pu=1.0, v_max_pu=1.0 + 1e-9),
            Bus(2, "load", nominal_load_p=load_kw, nominal_load_q=load_kvar,
                houses=houses, v_max_pu=v_max_pu),
        ),
        branches=(Branch(1, 2, r, x, s_max),),
        base_kva=base_kva, s_tran=5.0,
    )


def three_bus_chain(base_kva: float = 1000.0) -> Network:
    return Network(
        buses=(
            Bus(1, "substation", is_slack=True, v_min_pu=1.0, v_max_pu=1.0 + 1e-9),
            Bus(2, "mid", nominal_load_p=80.0, nominal_load_q=16.0, houses=8),
            Bus(3, "end", nominal_load_p=60.0, nominal_load_q=12.0, houses=8),
        ),
        branches=(Branch(1, 2, 0.012, 0.024, 2.0), Branch(2, 3, 0.016, 0.028, 1.5)),
        base_kva=base_kva, s_tran=5.0,
    )


def four_bus(base_kva: float = 1000.0) -> Network:
    """Chain of three load buses behind the substation, one with a spur."""
    return Network(
        buses=(
            Bus(1, "substation", is_slack=True, v_min_pu=1.0, v_max_pu=1.0 + 1e-9),
            Bus(2, "feeder_head", nominal_load_p=90.0, nominal_load_q=18.0, houses=10),
            Bus(3, "midway", nominal_load_p=70.0, nominal_load_q=14.0, houses=8),
            Bus(4, "feeder_end", nominal_load_p=50.0, nominal_load_q=10.0, houses=6),
        ),
        branches=(
            Branch(1, 2, 0.010, 0.020, 2.5),
            Branch(2, 3, 0.014, 0.026, 1.8),
            Branch(2, 4, 0.018, 0.030, 1.2),
        ),
        base_kva=base_kva, s_tran=5.0,
    )


def ieee123_like(seed: int = 123) -> Network:
    """Synthetic 123-node radial feeder with about 8 houses per node.

    Deterministic for a given seed; not the published test feeder, but shaped
    like it: 123 buses, 122 branches, roughly 3.4 MW of coincident peak when
    each house peaks at 3.5 kW.
    """
    rng = np.random.default_rng(seed)
    n = 123
    buses = [Bus(1, "substation", is_slack=True, v_min_pu=1.0, v_max_pu=1.0 + 1e-9)]
    branches = []
    # trunk of 20 nodes, laterals hanging off it
    trunk = list(range(2, 22))
    prev = 1
    for bid in trunk:
        branches.append(Branch(prev, bid, 0.004 + 0.002 * rng.random(),
                               0.008 + 0.004 * rng.random(), 4.0))
        prev = bid
    next_id = 22
    attach_points = trunk.copy()
    while next_id <= n:
        parent = int(rng.choice(attach_points))
        branches.append(Branch(parent, next_id, 0.008 + 0.010 * rng.random(),
                               0.016 + 0.016 * rng.random(), 0.6))
        attach_points.append(next_id)
        next_id += 1
    for bid in range(2, n + 1):
        houses = int(rng.integers(6, 11))
        load = houses * (2.8 + 1.4 * rng.random())
        buses.append(Bus(bid, f"node{bid}", nominal_load_p=round(load, 3),
                         nominal_load_q=round(load * 0.2, 3), houses=houses))
    return Network(buses=tuple(buses), branches=tuple(branches),
                   base_kva=3500.0, base_kv=4.16, s_tran=1.2,
                   pcc_p_min=-2.0, pcc_p_max=2.0, pcc_q_min=-2.0, pcc_q_max=2.0)


def write_bundled_data(out_dir: Path | str = DATA_DIR) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, net in (("four_bus", four_bus()), ("ieee123_like", ieee123_like())):
        path = out_dir / f"{name}.json"
        path.write_text(json.dumps(network_to_dict(net), indent=1) + "\n")
        written.append(path)
    return written


def bundled_network_path(name: str) -> Path:
    path = DATA_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled network named {name!r}")
    return path
