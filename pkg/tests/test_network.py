import json

import numpy as np
import pytest

from dhnet.network import (
    Arc,
    ArcKind,
    Network,
    NetworkError,
    Node,
    Part,
    PipeAttributes,
    cycle_basis,
    flow_partition,
    load_network,
    network_from_dict,
    path_network,
    random_solenoidal_flow,
    star_network,
    two_loop_network,
)

from conftest import loop4


def test_minimal_loop():
    net = loop4()
    assert net.n_pipes == 2 and net.n_consumers == 1
    assert net.arcs[net.depot_arc].kind is ArcKind.DEPOT


def test_two_depots_rejected():
    d = loop4().to_dict()
    d["nodes"] += [{"id": "x", "part": "backflow"}, {"id": "y", "part": "foreflow"}]
    d["arcs"].append({"id": "depot2", "tail": "x", "head": "y", "kind": "depot"})
    d["arcs"].append({"id": "c2", "tail": "y", "head": "x", "kind": "consumer"})
    with pytest.raises(NetworkError, match="multiple depot arcs"):
        network_from_dict(d)


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda d: d["arcs"].append(dict(d["arcs"][2], id="c")), "duplicate_id"),
        (lambda d: d["arcs"][2].update(tail="b1", head="f1"), "arc_kind"),
        (lambda d: d["arcs"][1].update(head="nowhere"), "unknown_node"),
        (lambda d: d["nodes"].append({"id": "lonely", "part": "foreflow"}), "disconnected"),
        (lambda d: d["arcs"].pop(0), "missing_depot"),
        (lambda d: d["arcs"][1]["pipe"].update(length=-1.0), "schema"),
        (lambda d: d["arcs"][1].pop("pipe"), "schema"),
    ],
)
def test_validation_rules(mutate, code):
    d = loop4().to_dict()
    mutate(d)
    with pytest.raises(NetworkError) as exc:
        network_from_dict(d)
    assert exc.value.code == code


def test_json_round_trip(tmp_path):
    net = star_network(4, seed=3)
    p = tmp_path / "net.json"
    p.write_text(json.dumps(net.to_dict()))
    back = load_network(p)
    assert back.to_dict() == net.to_dict()
    np.testing.assert_array_equal(back.length, net.length)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(NetworkError):
        load_network(p)


def test_star_with_32_consumers():
    assert star_network(32).n_consumers == 32


@pytest.mark.parametrize(
    "net, pipes",
    [(path_network(1, pipes=5), 5), (star_network(3, trunk_pipes=2), 10), (two_loop_network(8), 20)],
)
def test_generator_sizes(net, pipes):
    assert net.n_pipes == pipes


def test_incidence_and_cycle_space():
    net = two_loop_network(8)
    Z = cycle_basis(net)
    # cycle space dimension = arcs - nodes + 1
    assert Z.shape[1] == net.n_arcs - net.n_nodes + 1
    q = random_solenoidal_flow(net, np.random.default_rng(0), basis=Z)
    assert np.abs(net.volume_residual(q)).max() < 1e-14


def test_partition_aligned_flow():
    net = loop4()
    part = flow_partition(net, np.ones(net.n_arcs))
    for n in range(net.n_nodes):
        assert sorted(part.inflow[n]) == sorted(net.delta_in(n))
        assert sorted(part.outflow[n]) == sorted(net.delta_out(n))


def test_partition_reversed_pipe():
    net = loop4()
    q = np.ones(net.n_arcs)
    pf = net.arc_index["pf"]
    f1 = net.node_index["f1"]
    q[pf] = -1.0
    part = flow_partition(net, q)
    assert pf in part.outflow[f1] and pf not in part.inflow[f1]
    assert pf in part.inflow[net.node_index["f0"]]


def test_partition_zero_flow_counts_as_inflow():
    net = loop4()
    q = np.ones(net.n_arcs)
    pf = net.arc_index["pf"]
    q[pf] = 0.0
    part = flow_partition(net, q)
    assert pf in part.inflow[net.node_index["f1"]]


def test_pipe_geometry_rule():
    with pytest.raises(NetworkError) as exc:
        PipeAttributes(0.0, 0.1)
    assert exc.value.code == "pipe_geometry"


def test_pipe_cross_section():
    assert PipeAttributes(10.0, 0.1).cross_section == pytest.approx(np.pi * 0.01 / 4)
