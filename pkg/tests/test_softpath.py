import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiersue import fixtures as F
from hiersue import softpath as sp
from hiersue.costlib import CostParams as C
from hiersue.hiernet import Edge, HierNetwork, LevelGraph
from hiersue.oracle import (NestedPath, PathModel, brute_flat_soft_value,
                            enumerate_nested_paths)


def parallel(costs, gamma, demand=1.0):
    edges = [Edge(f"e{i}", "s", "t", cost=C.constant(c)) for i, c in enumerate(costs)]
    return HierNetwork([LevelGraph(["s", "t"], edges, [("s", "t")], 1)], [gamma], [demand])


def test_soft_value_examples():
    assert sp.soft_values(parallel([3.0], 0.7), [3.0]).psi(1, 0) == pytest.approx(3.0)
    assert sp.soft_values(parallel([1, 1], 1.0), [1, 1]).psi(1, 0) == pytest.approx(1 - np.log(2))
    ref = -0.5 * np.log(np.exp(-2) + np.exp(-4))
    assert sp.soft_values(parallel([1, 2], 0.5), [1, 2]).psi(1, 0) == pytest.approx(ref, abs=1e-14)


def test_path_cost_examples():
    lvl = LevelGraph(["s", "m", "t"], [Edge("a", "s", "m", cost=C.affine(1, 1)),
                                       Edge("b", "m", "t", cost=C.affine(1, 1))], [("s", "t")], 2)
    net = HierNetwork([lvl], [1.0], [1.0])
    assert sp.path_cost(net, {"a": 1.0, "b": 2.0}, NestedPath(1, 0, ("a", "b"))) == 3.0
    net = F.two_level()
    t = net.compiled.free_flow
    table = sp.SoftValueTable(None, {"x": 1.5})
    # level-1 path x then b (b has free-flow toll 0.5): 1.5 + 0.5
    assert sp.path_cost(net, t + 0.5 * (np.array(net.links) == "b"),
                        NestedPath(1, 0, ("x", "b")), table) == pytest.approx(2.5)
    for p in enumerate_nested_paths(net, 0):
        tt = dict(zip(net.links, t))
        assert sp.path_cost(net, t, p) == pytest.approx(sum(tt[e] for e in p.cost_edges(net)))


def test_missing_toll():
    with pytest.raises(sp.MissingToll):
        sp.soft_values(F.pigou(), {"e1": 1.0})


def test_soft_flow_examples():
    f = sp.soft_flows(F.single_path(), [1.0, 1.0]).link_flows
    assert np.allclose(f, 1.0)
    f = sp.soft_flows(F.symmetric(), [3.0, 3.0]).link_flows
    assert np.allclose(f, 1.0)
    net = F.pigou(0.1, 1.0)
    f2 = np.exp(-7) / (np.exp(-10) + np.exp(-7))
    assert sp.soft_flows(net, [1.0, 0.7]).link_flows[1] == pytest.approx(f2, abs=1e-14)


def test_lipschitz_examples():
    assert sp.lipschitz_bound(F.pigou(0.1, 1.0)) == pytest.approx(10.0)
    assert sp.lipschitz_bound(F.pigou(0.1, 0.0)) == 0.0
    # longest nested path of two_level: x(c or d,e) + b -> d, e, b = 3 cost edges
    net = F.two_level((0.5, 0.5), demand=2.0)
    assert sp.longest_nested_paths(net) == [3.0]
    assert sp.lipschitz_bound(net) == pytest.approx(36.0)


def _random_case(seed, **kw):
    rng = np.random.default_rng(seed)
    net = F.random_network(rng, **kw)
    t = net.compiled.free_flow + rng.uniform(0, 2, net.compiled.n_links)
    return net, t


@settings(max_examples=40)
@given(st.integers(0, 100_000))
def test_enumeration_equivalence(seed):
    net, t = _random_case(seed)
    pm = PathModel(net)
    soft = sp.soft_values(net, t).soft_cost
    brute, _ = pm.soft(t)
    for a, b in zip(soft, brute):
        assert np.allclose(a, b, atol=1e-9, rtol=0)
    assert np.allclose(sp.soft_flows(net, t).link_flows, pm.logit(t).link_flows, atol=1e-9, rtol=0)


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_equal_gamma_matches_flat_sum(seed):
    net, t = _random_case(seed, equal_gamma=True)
    assert np.allclose(sp.soft_values(net, t).soft_cost[0], brute_flat_soft_value(net, t),
                       atol=1e-9, rtol=0)


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_gradient_matches_finite_differences(seed):
    net, t = _random_case(seed)
    f = sp.soft_flows(net, t).link_flows
    g = np.empty_like(t)
    for j in range(t.size):
        h = 1e-5 * (1 + abs(t[j]))
        e = np.zeros_like(t)
        e[j] = h
        g[j] = (sp.smooth_term(net, t + e) - sp.smooth_term(net, t - e)) / (2 * h)
    assert np.linalg.norm(-g - f) <= 1e-5 * max(1.0, np.linalg.norm(f))


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_conservation(seed):
    net, t = _random_case(seed)
    state = sp.soft_flows(net, t)
    comp = net.compiled
    for k, (lvl, Y, D) in enumerate(zip(comp.levels, state.layers, state.demands)):
        # all demand leaves the origin in the first hop
        assert np.allclose(Y[:, 0, :].sum(axis=1), D)
        if k + 1 < comp.m:
            arc = Y.sum(axis=(0, 1))
            nxt = state.demands[k + 1]
            assert np.allclose(nxt[lvl.child[lvl.exp_arcs]], arc[lvl.exp_arcs])


def test_softmin_limit():
    net = F.braess()
    t = np.array([0.4, 2.0, 2.0, 0.4, 0.1])
    shortest = 0.9
    n_paths = 3
    for g in (1.0, 0.1, 0.01, 0.001):
        s = sp.soft_values(net.with_gamma([g]), t).psi(1, 0)
        assert 0 <= shortest - s <= g * np.log(n_paths) + 1e-12


def test_small_gamma_is_finite():
    s = sp.soft_values(F.three_level((1e-3,) * 3), F.three_level().compiled.free_flow * 50)
    assert all(np.isfinite(x).all() for x in s.soft_cost)
