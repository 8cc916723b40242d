"""Small reference networks and a random network generator."""
from __future__ import annotations

import numpy as np

from .costlib import CostParams as C
from .hiernet import Edge, HierNetwork, LevelGraph, validate


def _cost(eid, u, v, params, link=None):
    return Edge(eid, u, v, cost=params, link=link)


def _exp(eid, u, v, od):
    return Edge(eid, u, v, expands_to=od)


def pigou(gamma=0.1, demand=2.0):
    """Two parallel edges: a constant cost 1 and a linear cost f."""
    lvl = LevelGraph(["s", "t"], [_cost("e1", "s", "t", C.constant(1.0)),
                                  _cost("e2", "s", "t", C.affine(0.0, 1.0))],
                     [("s", "t")], 1)
    return HierNetwork([lvl], [gamma], [demand])


def symmetric(gamma=0.5, demand=2.0, params=None):
    params = params or C.affine(1.0, 1.0)
    lvl = LevelGraph(["s", "t"], [_cost("e1", "s", "t", params),
                                  _cost("e2", "s", "t", params)], [("s", "t")], 1)
    return HierNetwork([lvl], [gamma], [demand])


def single_path(gamma=0.5, demand=1.0):
    lvl = LevelGraph(["s", "m", "t"], [_cost("a", "s", "m", C.affine(1.0, 1.0)),
                                       _cost("b", "m", "t", C.bpr(1.0, 1.0, 0.5, 2.0))],
                     [("s", "t")], 2)
    return HierNetwork([lvl], [gamma], [demand])


def braess(gamma=0.2, demand=2.0):
    edges = [_cost("sa", "s", "a", C.affine(0.0, 1.0)),
             _cost("at", "a", "t", C.constant(2.0)),
             _cost("sb", "s", "b", C.constant(2.0)),
             _cost("bt", "b", "t", C.affine(0.0, 1.0)),
             _cost("ab", "a", "b", C.affine(0.1, 0.1))]
    lvl = LevelGraph(["s", "a", "b", "t"], edges, [("s", "t")], 3)
    return HierNetwork([lvl], [gamma], [demand])


def cyclic(gamma=0.3, demand=1.0):
    """Graph with a 2-cycle; hop limit 4 admits four walks s -> t."""
    edges = [_cost("sa", "s", "a", C.affine(1.0, 1.0)),
             _cost("as", "a", "s", C.constant(0.5)),
             _cost("at", "a", "t", C.affine(0.5, 1.0)),
             _cost("st", "s", "t", C.bpr(2.0, 1.0, 0.15, 4.0))]
    lvl = LevelGraph(["s", "a", "t"], edges, [("s", "t")], 4)
    return HierNetwork([lvl], [gamma], [demand])


def two_od(gamma=0.25, demands=(1.0, 1.5)):
    edges = [_cost("xa", "x", "a", C.affine(0.5, 1.0)),
             _cost("ya", "y", "a", C.affine(0.2, 0.5)),
             _cost("at", "a", "t", C.bpr(1.0, 2.0, 0.5, 2.0)),
             _cost("xt", "x", "t", C.affine(2.0, 0.5)),
             _cost("yt", "y", "t", C.constant(2.5))]
    lvl = LevelGraph(["x", "y", "a", "t"], edges, [("x", "t"), ("y", "t")], 2)
    return HierNetwork([lvl], [gamma], list(demands))


def two_level(gamma=(0.5, 0.2), demand=2.0):
    """Level 1 chooses between a direct road and an expansion edge whose
    level-2 OD pair has two walks."""
    top = LevelGraph(["s", "m", "t"],
                     [_cost("a", "s", "t", C.bpr(2.0, 1.0, 1.0, 2.0)),
                      _exp("x", "s", "m", 0),
                      _cost("b", "m", "t", C.affine(0.5, 0.5))],
                     [("s", "t")], 2)
    low = LevelGraph(["p", "q", "r"],
                     [_cost("c", "p", "r", C.affine(1.0, 1.0)),
                      _cost("d", "p", "q", C.constant(0.3)),
                      _cost("e", "q", "r", C.affine(0.2, 2.0))],
                     [("p", "r")], 2)
    if np.isscalar(gamma):
        gamma = (gamma, gamma)
    return HierNetwork([top, low], list(gamma), [demand])


def two_level_shared(gamma=(0.4, 0.4), demands=(1.0, 0.5)):
    """Two level-1 OD pairs whose expansion edges open two level-2 OD pairs
    that share a level-2 link."""
    top = LevelGraph(["s", "u", "t"],
                     [_cost("a", "s", "t", C.affine(2.0, 1.0)),
                      _exp("x", "s", "t", 0),
                      _exp("y", "u", "t", 1),
                      _cost("b", "u", "t", C.affine(1.5, 0.5))],
                     [("s", "t"), ("u", "t")], 1)
    low = LevelGraph(["p", "q", "r"],
                     [_cost("c", "p", "q", C.affine(0.5, 1.0)),
                      _cost("d", "q", "r", C.bpr(0.5, 1.0, 0.5, 2.0)),
                      _cost("e", "p", "r", C.affine(1.0, 0.5)),
                      _cost("g", "r", "q", C.constant(0.2))],
                     [("p", "r"), ("q", "r")], 2)
    if np.isscalar(gamma):
        gamma = (gamma, gamma)
    return HierNetwork([top, low], list(gamma), list(demands))


def three_level(gamma=(0.3, 0.2, 0.1), demand=1.5):
    top = LevelGraph(["s", "t"], [_cost("a1", "s", "t", C.affine(3.0, 1.0)),
                                  _exp("x1", "s", "t", 0)], [("s", "t")], 1)
    mid = LevelGraph(["u", "v", "w"], [_cost("b2", "u", "w", C.affine(1.0, 1.0)),
                                       _exp("x2", "u", "v", 0),
                                       _cost("c2", "v", "w", C.constant(0.5))],
                     [("u", "w")], 2)
    low = LevelGraph(["p", "q"], [_cost("d3", "p", "q", C.affine(0.5, 1.0)),
                                  _cost("e3", "p", "q", C.bpr(1.0, 1.0, 0.5, 3.0))],
                     [("p", "q")], 1)
    if np.isscalar(gamma):
        gamma = (gamma,) * 3
    return HierNetwork([top, mid, low], list(gamma), [demand])


def capacity(gamma=0.1, demand=2.0, fast=None):
    """A fast capacity-limited edge next to a slower congestible one."""
    fast = fast or C.capacity_limited(1.0, 1.0)
    lvl = LevelGraph(["s", "t"], [_cost("fast", "s", "t", fast),
                                  _cost("slow", "s", "t", C.affine(2.0, 1.0))],
                     [("s", "t")], 1)
    return HierNetwork([lvl], [gamma], [demand])


def zero_demand(gamma=0.3):
    net = braess(gamma)
    return net.with_demands([0.0])


FIXTURES = {
    "pigou": pigou,
    "symmetric": symmetric,
    "braess": braess,
    "cyclic": cyclic,
    "two_od": two_od,
    "two_level": two_level,
    "two_level_shared": two_level_shared,
    "three_level": three_level,
    "capacity": capacity,
}


# -- random networks ---------------------------------------------------------

def _random_params(rng):
    kind = rng.integers(4)
    if kind == 0:
        return C.constant(rng.uniform(0.1, 2.0))
    if kind == 1:
        return C.affine(rng.uniform(0.0, 2.0), rng.uniform(0.1, 2.0))
    return C.bpr(rng.uniform(0.2, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.1, 1.0),
                 float(rng.integers(1, 5)))


def _random_level(rng, n_od, exp_targets, max_edges, prefix):
    """Random multigraph on a few nodes with ``n_od`` OD pairs all reachable."""
    n_nodes = int(rng.integers(2, 5))
    nodes = [f"{prefix}{i}" for i in range(n_nodes)]
    ods = []
    for _ in range(n_od):
        o, d = rng.choice(n_nodes, size=2, replace=False)
        ods.append((nodes[o], nodes[d]))
    pairs = [(ods[i][0], ods[i][1]) for i in range(n_od)]
    n_edges = max(len(pairs) + len(exp_targets), int(rng.integers(2, max_edges + 1)))
    n_edges = min(n_edges, max_edges)
    ends = list(pairs)
    while len(ends) < n_edges:
        u, v = rng.choice(n_nodes, size=2, replace=False)
        ends.append((nodes[u], nodes[v]))
    rng.shuffle(ends)
    kinds = ["cost"] * len(ends)
    for j, target in zip(rng.permutation(len(ends))[:len(exp_targets)], exp_targets):
        kinds[j] = target
    edges = []
    for j, ((u, v), kind) in enumerate(zip(ends, kinds)):
        eid = f"{prefix}e{j}"
        if kind == "cost":
            edges.append(_cost(eid, u, v, _random_params(rng)))
        else:
            edges.append(_exp(eid, u, v, kind))
    hop = int(rng.integers(1, 4))
    return LevelGraph(nodes, edges, ods, hop)


def random_network(rng, max_levels=3, max_edges=8, gamma_range=(0.05, 2.0),
                   max_paths=10_000, equal_gamma=False):
    """Random valid hierarchy with at most ``max_paths`` nested paths per OD."""
    from .oracle import count_nested_paths

    for _ in range(1000):
        m = int(rng.integers(1, max_levels + 1))
        n_od = [int(rng.integers(1, 3))]
        levels = []
        for k in range(m):
            if k + 1 < m:
                n_next = int(rng.integers(1, 3))
                n_exp = min(n_next, max_edges - n_od[k])
                if n_exp < 1:
                    break
                targets = list(range(n_exp))
                n_next = n_exp
            else:
                targets, n_next = [], 0
            levels.append(_random_level(rng, n_od[k], targets, max_edges, f"L{k + 1}"))
            n_od.append(n_next)
        if len(levels) != m:
            continue
        gam = rng.uniform(*gamma_range, size=m)
        if equal_gamma:
            gam[:] = gam[0]
        demands = rng.uniform(0.2, 2.0, size=n_od[0])
        net = HierNetwork(levels, gam.tolist(), demands.tolist())
        if not validate(net).ok:
            continue
        if max(count_nested_paths(net, w) for w in range(n_od[0])) > max_paths:
            continue
        return net
    raise RuntimeError("could not draw a valid random network")
