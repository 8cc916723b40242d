import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiersue import fixtures as F
from hiersue.costlib import CostParams as C
from hiersue.hiernet import (AugmentSpec, CommonSink, CommonSource, Edge, HierNetwork,
                             LevelGraph, NetworkFormatError, NodeExpansion, OptOut,
                             UnequalTemperatures, UnknownNode, augment, dump_network,
                             flatten, load_network, network_from_dict, network_to_dict,
                             validate)
from hiersue.oracle import PathModel, count_nested_paths, enumerate_nested_paths


def _two_level_sub(n_sub):
    """Level 1: a single expansion edge s->t; level 2 has ``n_sub`` parallel edges."""
    top = LevelGraph(["s", "t"], [Edge("x", "s", "t", expands_to=0)], [("s", "t")], 1)
    low = LevelGraph(["p", "q"], [Edge(f"c{i}", "p", "q", cost=C.affine(1.0 + i, 1.0))
                                  for i in range(n_sub)], [("p", "q")], 1)
    return HierNetwork([top, low], [0.5, 0.5], [1.0])


def test_validate_minimal_net():
    assert validate(F.symmetric(demand=1.0)).ok


def test_validate_dangling_expansion():
    net = F.two_level()
    top = net.levels[0]
    edges = [Edge("x", "s", "m", expands_to=3) if e.id == "x" else e for e in top.edges]
    bad = HierNetwork([LevelGraph(top.nodes, edges, top.od_pairs, 2), net.levels[1]],
                      net.gamma, net.demands)
    assert any("dangling expansion" in v for v in validate(bad).violations)


def test_validate_nonpositive_temperature():
    net = F.two_level().with_gamma([0.5, 0.0])
    assert any("nonpositive temperature" in v for v in validate(net).violations)


def test_validate_other_defects():
    lvl = LevelGraph(["s", "t", "u"], [Edge("a", "s", "t", cost=C.affine(1, 1))],
                     [("s", "u")], 2)
    rep = validate(HierNetwork([lvl], [1.0], [-1.0]))
    text = " ".join(rep.violations)
    assert "unreachable OD" in text and "negative demand" in text


def test_nested_path_counts():
    assert len(enumerate_nested_paths(F.symmetric(), 0)) == 2
    assert len(enumerate_nested_paths(_two_level_sub(3), 0)) == 3
    # two level-1 paths, each through its own expansion edge with 2 sub-paths
    top = LevelGraph(["s", "t"], [Edge("x", "s", "t", expands_to=0),
                                  Edge("y", "s", "t", expands_to=1)], [("s", "t")], 1)
    low = LevelGraph(["p", "q", "r"], [Edge("a", "p", "q", cost=C.affine(1, 1)),
                                       Edge("b", "p", "q", cost=C.affine(2, 1)),
                                       Edge("c", "r", "q", cost=C.affine(1, 2)),
                                       Edge("d", "r", "q", cost=C.constant(2))],
                     [("p", "q"), ("r", "q")], 1)
    net = HierNetwork([top, low], [1.0, 1.0], [1.0])
    paths = enumerate_nested_paths(net, 0)
    assert len(paths) == 4 == count_nested_paths(net, 0)
    assert [p.cost_edges(net) for p in paths] == [["a"], ["b"], ["c"], ["d"]]


def test_enumeration_cap():
    from hiersue.hiernet import PathExplosion
    with pytest.raises(PathExplosion):
        enumerate_nested_paths(F.cyclic(), 0, cap=3)


def test_cyclic_walks_counted_per_hop():
    paths = enumerate_nested_paths(F.cyclic(), 0)
    # lexicographic in edge-declaration order (sa, as, at, st)
    assert [p.edges for p in paths] == [("sa", "as", "sa", "at"), ("sa", "as", "st"),
                                        ("sa", "at"), ("st",)]


def test_flatten_identity_on_one_level():
    net = F.braess()
    assert flatten(net) is net


def test_flatten_two_level_cost_edge_sets():
    net = _two_level_sub(2)
    flat = flatten(net)
    assert flat.m == 1
    got = sorted(tuple(p.cost_edges(flat)) for p in enumerate_nested_paths(flat, 0))
    links = {e.id: e.link_id for e in flat.levels[0].edges}
    got = sorted(tuple(links[e] for e in p) for p in got)
    assert got == [("c0",), ("c1",)]


def test_flatten_rejects_unequal_gamma():
    with pytest.raises(UnequalTemperatures):
        flatten(F.two_level((0.5, 0.2)))


@pytest.mark.parametrize("make", [lambda: F.two_level(0.3), lambda: F.two_level_shared(0.4),
                                  lambda: F.three_level(0.2)])
def test_flatten_preserves_nested_path_multisets(make):
    net = make()
    flat = flatten(net)
    links = {e.id: e.link_id for e in flat.levels[0].edges}
    for w in range(len(net.levels[0].od_pairs)):
        orig = Counter(tuple(p.cost_edges(net)) for p in enumerate_nested_paths(net, w))
        new = Counter(tuple(links[e] for e in p.cost_edges(flat))
                      for p in enumerate_nested_paths(flat, w))
        assert orig == new
        assert count_nested_paths(net, w) == count_nested_paths(flat, w)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_flatten_random_equal_gamma(seed):
    net = F.random_network(np.random.default_rng(seed), equal_gamma=True, max_paths=2000)
    flat = flatten(net)
    assert validate(flat).ok
    for w in range(len(net.levels[0].od_pairs)):
        assert count_nested_paths(net, w) == count_nested_paths(flat, w)


def test_augment_opt_out():
    net = augment(F.pigou(), AugmentSpec(opt_out=OptOut(cost=3.0)))
    paths = enumerate_nested_paths(net, 0)
    assert len(paths) == 3
    assert paths[-1].edges == ("optout0",)
    assert net.levels[0].edges[-1].cost == C.constant(3.0)


def test_augment_common_source():
    net = F.two_od()
    new = augment(net, AugmentSpec(common_source=CommonSource("S", {"x": 0.0, "y": 0.0})))
    assert new.levels[0].od_pairs == (("S", "t"),)
    assert new.demands == (2.5,)
    assert validate(new).ok


def test_augment_common_sink_and_unknown_node():
    net = F.two_od()
    new = augment(net, AugmentSpec(common_sink=CommonSink("T", {"t": 0.0})))
    assert {d for _, d in new.levels[0].od_pairs} == {"T"}
    with pytest.raises(UnknownNode):
        augment(net, AugmentSpec(common_source=CommonSource("S", {"nowhere": 0.0})))


def test_augment_node_expansion_preserves_costs():
    # node 'a' in braess has 2 in-edges (sa) and... build a 2-in/2-out node explicitly
    e = [Edge("s1", "s", "v", cost=C.affine(1, 1)), Edge("s2", "s", "v", cost=C.affine(2, 1)),
         Edge("v1", "v", "t", cost=C.affine(0.5, 1)), Edge("v2", "v", "t", cost=C.constant(1))]
    net = HierNetwork([LevelGraph(["s", "v", "t"], e, [("s", "t")], 2)], [0.5], [1.0])
    new = augment(net, AugmentSpec(expand_nodes=(NodeExpansion(1, "v", 0.25),)))
    added = [x for x in new.levels[0].edges if x.id not in {"s1", "s2", "v1", "v2"}]
    assert len(added) == 4 and all(x.cost == C.constant(0.25) for x in added)
    assert "v" not in new.levels[0].nodes
    t_old = PathModel(net).path_costs(net.compiled.free_flow)[0]
    t_new = PathModel(new).path_costs(new.compiled.free_flow)[0]
    assert np.allclose(sorted(t_new), sorted(t_old + 0.25))


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_augment_keeps_validity(seed):
    rng = np.random.default_rng(seed)
    net = F.random_network(rng, max_paths=2000)
    o, d = net.levels[0].od_pairs[0]
    new = augment(net, AugmentSpec(opt_out=OptOut(1.0),
                                   common_source=CommonSource("SRC", {o: 0.0})))
    assert validate(new).ok


def test_file_roundtrip(tmp_path):
    for name, make in F.FIXTURES.items():
        net = make()
        path = tmp_path / f"{name}.json"
        dump_network(net, path)
        again = load_network(path)
        assert again == net
        assert network_to_dict(network_from_dict(network_to_dict(again))) == network_to_dict(net)


def test_parser_names_unknown_key():
    d = network_to_dict(F.pigou())
    d["levels"][0]["edges"][1]["weight"] = 3
    with pytest.raises(NetworkFormatError, match="weight"):
        network_from_dict(d)
    d = network_to_dict(F.pigou())
    d["colour"] = "red"
    with pytest.raises(NetworkFormatError, match="colour"):
        network_from_dict(json.loads(json.dumps(d)))
