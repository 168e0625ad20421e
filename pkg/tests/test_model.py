import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clgnet.benchmarks import random_clg_network
from clgnet.errors import InputError, NetworkParseError, StructureError
from clgnet.model import (Evidence, Network, ancestors, check_evidence, continuous_node, direct_discrete_parents,
                          discrete_node, is_polytree, network_to_dict, parse_evidence, parse_network,
                          serialize_network, topological_order, validate)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), nd=st.integers(0, 6), nc=st.integers(1, 5))
def test_random_networks_validate_and_round_trip(seed, nd, nc):
    net = random_clg_network(np.random.default_rng(seed), nd, nc)
    assert validate(net).ok
    back = parse_network(serialize_network(net))
    assert network_to_dict(back) == network_to_dict(net)
    # serialization is a fixed point
    assert serialize_network(back) == serialize_network(net)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_topological_order_puts_parents_first(seed):
    net = random_clg_network(np.random.default_rng(seed), 5, 5)
    order = topological_order(net)
    pos = {n: i for i, n in enumerate(order)}
    assert sorted(order) == sorted(n.name for n in net.nodes)
    for node in net.nodes:
        assert all(pos[p] < pos[node.name] for p in node.parents)


def test_chain_accessors(chain):
    assert chain.discrete_names == ("A",)
    assert chain.continuous_names == ("X1", "X2")
    assert chain.cardinality("A") == 2
    assert chain.state_index("A", "a1") == 1
    assert direct_discrete_parents(chain) == frozenset({"A"})
    assert ancestors(chain, ["X2"]) == {"A", "X1", "X2"}
    assert is_polytree(chain)


def test_cpt_row_layout_last_parent_fastest():
    net = Network((
        discrete_node("P", "ab", (), [[0.5, 0.5]]),
        discrete_node("Q", "xyz", (), [[0.2, 0.3, 0.5]]),
        discrete_node("R", "01", ("P", "Q"), [[i / 10, 1 - i / 10] for i in range(6)]),
    ))
    assert net.parent_row(("P", "Q"), (1, 2)) == 5
    assert net.parent_row(("P", "Q"), (0, 1)) == 1
    assert net.cpt_arrays["R"].shape == (2, 3, 2)
    assert net.cpt_arrays["R"][1, 0, 0] == pytest.approx(0.3)


def test_validate_collects_every_violation():
    net = Network((
        discrete_node("A", ("x",), (), [[1.0]]),
        discrete_node("B", ("0", "1"), ("Y",), [[0.5, 0.6]]),
        continuous_node("Y", ("B",), ("Z",), {("0",): (0.0, (1.0,), -1.0)}),
    ))
    msgs = " | ".join(validate(net).violations)
    assert "at least 2 states" in msgs
    assert "illegal parent kind" in msgs
    assert "dangling" in msgs
    assert "missing CLG entry" in msgs
    assert "nonpositive variance" in msgs
    assert not validate(net)


def test_cycle_reported():
    net = Network((
        continuous_node("U", (), ("V",), (0.0, (1.0,), 1.0)),
        continuous_node("V", (), ("U",), (0.0, (1.0,), 1.0)),
    ))
    assert any("cycle" in v for v in validate(net).violations)


def test_cpt_row_sum_violation():
    net = Network((discrete_node("A", "01", (), [[0.5, 0.6]]),))
    assert any("sums to" in v for v in validate(net).violations)


def test_duplicate_names_rejected():
    with pytest.raises(StructureError):
        Network((discrete_node("A", "01", (), [[0.5, 0.5]]), discrete_node("A", "01", (), [[0.5, 0.5]])))


def test_parse_errors_carry_location():
    with pytest.raises(NetworkParseError) as exc:
        parse_network('{"nodes": [\n  {"name": "A",\n')
    assert exc.value.line is not None
    with pytest.raises(NetworkParseError):
        parse_network(json.dumps({"nodes": [{"type": "discrete"}]}))
    with pytest.raises(NetworkParseError):
        parse_network(json.dumps({"nodes": 3}))


def test_evidence_checks(chain):
    check_evidence(chain, Evidence({"A": "a1"}, {"X2": 0.3}))
    with pytest.raises(InputError):
        check_evidence(chain, Evidence({"X1": "a0"}, {}))
    with pytest.raises(InputError):
        check_evidence(chain, Evidence({}, {"A": 1.0}))
    with pytest.raises(InputError):
        check_evidence(chain, Evidence({}, {"X1": float("nan")}))
    ev = parse_evidence('{"discrete": {"A": "a0"}, "continuous": {"X2": 1.5}}')
    assert ev.discrete == {"A": "a0"} and ev.continuous == {"X2": 1.5}


def test_polytree_detection():
    diamond = Network((
        discrete_node("A", "01", (), [[0.5, 0.5]]),
        continuous_node("X", ("A",), (), {("0",): (0.0, (), 1.0), ("1",): (1.0, (), 1.0)}),
        continuous_node("Y", ("A",), (), {("0",): (0.0, (), 1.0), ("1",): (1.0, (), 1.0)}),
        continuous_node("Z", (), ("X", "Y"), (0.0, (1.0, 1.0), 1.0)),
    ))
    assert not is_polytree(diamond)
    for seed in range(20):
        assert is_polytree(random_clg_network(np.random.default_rng(seed), 4, 4, polytree=True))
