"""Network model: parsing, validation, topology, peak load, round-trips."""

import json

import numpy as np
import pytest

from hostcap import fixtures
from hostcap.network import (
    Branch,
    Bus,
    Network,
    NetworkError,
    feeder_peak_load,
    network_from_dict,
    network_to_dict,
    parse_network,
    topology_order,
    write_network,
)

TWO_BUS_JSON = {
    "base_kva": 1000.0,
    "buses": [
        {"id": 1, "name": "slack", "slack": True},
        {"id": 2, "name": "load", "load_p_kw": 100.0, "load_q_kvar": 20.0, "houses": 8},
    ],
    "branches": [{"from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.02, "s_max_pu": 1.0}],
}


def test_parse_two_bus(tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(TWO_BUS_JSON))
    net = parse_network(path)
    assert net.n_bus == 2 and net.n_branch == 1
    assert net.slack.id == 1
    assert net.buses[1].v_min_pu == pytest.approx(0.95)
    assert net.buses[1].v_max_pu == pytest.approx(1.05)
    assert net.buses[1].v_min_sq == pytest.approx(0.95 ** 2)


def test_parse_cycle_names_branch(tmp_path):
    data = json.loads(json.dumps(TWO_BUS_JSON))
    data["buses"].append({"id": 3, "name": "c", "load_p_kw": 10.0})
    data["branches"] += [
        {"from": 2, "to": 3, "r_pu": 0.01, "x_pu": 0.01, "s_max_pu": 1.0},
        {"from": 3, "to": 1, "r_pu": 0.01, "x_pu": 0.01, "s_max_pu": 1.0},
    ]
    path = tmp_path / "cycle.json"
    path.write_text(json.dumps(data))
    with pytest.raises(NetworkError, match="cycle|branches"):
        parse_network(path)


def test_duplicate_bus_and_missing_slack():
    with pytest.raises(NetworkError, match="duplicate bus id 2"):
        Network(buses=(Bus(1, "s", is_slack=True, v_min_pu=1.0, v_max_pu=1.0001),
                       Bus(2, "a"), Bus(2, "b")),
                branches=(Branch(1, 2, 0.01, 0.01, 1.0), Branch(2, 2, 0.01, 0.01, 1.0)))
    with pytest.raises(NetworkError, match="slack"):
        Network(buses=(Bus(1, "a"), Bus(2, "b")),
                branches=(Branch(1, 2, 0.01, 0.01, 1.0),))


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(NetworkError, match="not valid JSON"):
        parse_network(path)


def test_multiphase_rejected(tmp_path):
    data = dict(TWO_BUS_JSON, phases=3)
    path = tmp_path / "tri.json"
    path.write_text(json.dumps(data))
    with pytest.raises(NetworkError, match="multiphase|balanced"):
        parse_network(path)


def test_roundtrip_identity(tmp_path, net4):
    path = tmp_path / "net.json"
    write_network(net4, path)
    again = parse_network(path)
    assert network_to_dict(again) == network_to_dict(net4)
    assert again == net4


def test_topology_two_bus(net2):
    order = topology_order(net2)
    assert order.parent == (-1, 0)
    assert order.children == ((0,), ())
    assert order.order == (0, 1)


def test_topology_chain_and_star():
    chain = fixtures.three_bus_chain()
    order = topology_order(chain)
    assert order.order == (0, 1, 2)
    star = Network(
        buses=(Bus(1, "s", is_slack=True, v_min_pu=1.0, v_max_pu=1.0001),
               Bus(2, "a"), Bus(3, "b"), Bus(4, "c")),
        branches=(Branch(1, 2, 0.01, 0.01, 1.0), Branch(1, 3, 0.01, 0.01, 1.0),
                  Branch(1, 4, 0.01, 0.01, 1.0)))
    order = topology_order(star)
    assert len(order.children[0]) == 3
    assert all(len(order.children[i]) == 0 for i in (1, 2, 3))


def test_topology_visits_every_bus_once():
    net = fixtures.ieee123_like()
    assert net.n_bus == 123 and net.n_branch == 122
    order = topology_order(net)
    assert sorted(order.order) == list(range(123))
    non_slack = [i for i in range(123) if order.parent[i] >= 0]
    assert len(non_slack) == 122


def test_feeder_peak_load_simple(net2):
    profiles = np.array([[0.0, 0.0], [100.0, 80.0]])
    assert feeder_peak_load(net2, profiles) == pytest.approx(100.0)


def test_feeder_peak_load_coincident(net2):
    # peaks at different hours: the coincident hourly sum wins
    profiles = np.array([[60.0, 50.0], [40.0, 45.0]])
    assert feeder_peak_load(net2, profiles) == pytest.approx(100.0)


def test_feeder_peak_load_houses_scale():
    # 984 houses at a coincident 3.5 kW per house
    buses = [Bus(1, "s", is_slack=True, v_min_pu=1.0, v_max_pu=1.0001)]
    branches = []
    for i in range(2, 124):
        buses.append(Bus(i, f"n{i}", houses=8))
        branches.append(Branch(i - 1, i, 0.001, 0.002, 5.0))
    net = Network(buses=tuple(buses), branches=tuple(branches), base_kva=3500.0)
    houses = sum(b.houses for b in net.buses)
    renorm = 984 / houses
    profile = np.array([[b.houses * 3.5 * renorm] for b in net.buses])
    assert feeder_peak_load(net, profile) == pytest.approx(3444.0)


def test_feeder_peak_load_missing_profile(net4):
    with pytest.raises(NetworkError, match="cover"):
        feeder_peak_load(net4, np.zeros((2, 4)))


def test_per_unit_roundtrip(net4):
    vals = np.array([123.456, 0.001, 9876.5])
    back = net4.pu_to_kw(net4.kw_to_pu(vals))
    assert np.allclose(back, vals, rtol=1e-12)


def test_network_from_dict_bad_field():
    with pytest.raises(NetworkError, match="malformed"):
        network_from_dict({"buses": [{"noid": 1}], "branches": []})
