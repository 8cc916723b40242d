"""Smoothed Bellman-Ford over the level hierarchy.

For a toll vector ``t`` (one value per link) the *soft cost* of an OD pair at
level ``k`` is ``-gamma_k * log(sum_p exp(-g_p / gamma_k))`` over its walks,
where ``g_p`` adds the tolls of the walk's cost edges and the soft costs of
the lower-level OD pairs behind its expansion edges.  Soft costs are computed
bottom-up with a hop-indexed log-sum-exp recursion; flows follow from the
matching backward recursion, top-down, starting from the level-1 demands.

Per level the pass stores the *layer flows* ``Y[od, h, arc]`` -- the flow of
OD ``od`` that takes ``arc`` as its ``h``-th step.  These are the branching
probabilities of the logit choice scaled by demand and are all the solver and
the primal objective need; explicit path flows are never formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hiernet import CompiledLevel, HierNetwork


class MissingToll(KeyError):
    pass


def toll_array(net: HierNetwork, t) -> np.ndarray:
    """Coerce a mapping ``link -> toll`` or an array to the link-ordered array."""
    comp = net.compiled
    if isinstance(t, dict):
        missing = [l for l in comp.links if l not in t]
        if missing:
            raise MissingToll(f"no toll for link(s) {missing}")
        return np.array([float(t[l]) for l in comp.links])
    arr = np.asarray(t, dtype=float)
    if arr.shape != (comp.n_links,):
        raise MissingToll(f"expected {comp.n_links} tolls, got shape {arr.shape}")
    return arr


@dataclass
class SoftValueTable:
    """Soft costs per level (array over that level's OD pairs) and the
    effective weight of every expansion edge."""
    soft_cost: list
    g_edge: dict

    def psi(self, level: int, od: int) -> float:
        return float(self.soft_cost[level - 1][od])


@dataclass
class FlowState:
    """Flows produced by a logit loading or a solver average.

    ``layers[k]`` has shape ``(n_od_k, H_k, n_arcs_k)``; ``demands[k]`` is the
    demand vector of level ``k + 1`` (given at level 1, induced below).
    """
    link_flows: np.ndarray
    demands: list
    layers: list

    def arc_flows(self, level: int) -> np.ndarray:
        return self.layers[level - 1].sum(axis=(0, 1))

    def as_dict(self, net: HierNetwork) -> dict:
        return dict(zip(net.compiled.links, self.link_flows.tolist()))

    def scaled_mix(self, other: "FlowState", theta: float) -> "FlowState":
        """``(1 - theta) * self + theta * other``."""
        mix = lambda a, b: (1.0 - theta) * a + theta * b
        return FlowState(mix(self.link_flows, other.link_flows),
                         [mix(a, b) for a, b in zip(self.demands, other.demands)],
                         [mix(a, b) for a, b in zip(self.layers, other.layers)])


# -- single level recursions -------------------------------------------------

def level_forward(lvl: CompiledLevel, arc_cost: np.ndarray):
    """Forward log-messages ``logA[od, h, v]`` and log partition per OD."""
    w = arc_cost / lvl.gamma
    logA = np.full((lvl.n_od, lvl.H + 1, lvl.n_nodes), -np.inf)
    logA[np.arange(lvl.n_od), 0, lvl.origin] = 0.0
    for h in range(lvl.H):
        logA[:, h + 1, :] = lvl.by_head.logsumexp(logA[:, h, lvl.tail] - w)
    at_dest = logA[np.arange(lvl.n_od), 1:, lvl.dest]  # (n_od, H)
    mx = at_dest.max(axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        logZ = np.log(np.exp(at_dest - safe[:, None]).sum(axis=1)) + safe
    return logA, logZ


def level_layer_probs(lvl: CompiledLevel, arc_cost, logA, logZ) -> np.ndarray:
    """Unit-demand layer flows ``P[od, h, arc]`` of the logit walk choice."""
    w = arc_cost / lvl.gamma
    H = lvl.H
    logB = np.full((lvl.n_od, H + 1, lvl.n_nodes), -np.inf)
    term = np.where(lvl.terminal, 0.0, -np.inf)
    logB[:, H, :] = term[:, H, :]
    for h in range(H - 1, -1, -1):
        cont = lvl.by_tail.logsumexp(logB[:, h + 1, lvl.head] - w)
        logB[:, h, :] = np.logaddexp(term[:, h, :], cont)
    logp = logA[:, :H, lvl.tail] - w + logB[:, 1:, lvl.head] - logZ[:, None, None]
    return np.exp(logp)


# -- whole hierarchy ---------------------------------------------------------

def _arc_costs(lvl: CompiledLevel, t, soft_below):
    c = np.empty(lvl.n_arcs)
    c[lvl.cost_arcs] = t[lvl.link[lvl.cost_arcs]]
    if lvl.exp_arcs.size:
        c[lvl.exp_arcs] = soft_below[lvl.child[lvl.exp_arcs]]
    return c


def forward_pass(net: HierNetwork, t):
    """Bottom-up soft costs.  Returns ``(soft_costs, cache)``."""
    comp = net.compiled
    t = toll_array(net, t)
    soft = [None] * comp.m
    cache = [None] * comp.m
    below = None
    for k in range(comp.m - 1, -1, -1):
        lvl = comp.levels[k]
        c = _arc_costs(lvl, t, below)
        logA, logZ = level_forward(lvl, c)
        soft[k] = -lvl.gamma * logZ
        cache[k] = (c, logA, logZ)
        below = soft[k]
    return soft, cache


def backward_pass(net: HierNetwork, cache, demands=None, unit=False) -> FlowState:
    """Top-down logit loading through the cached forward messages.

    With ``unit=True`` the layer arrays hold per-OD probabilities (unit
    demand at every level) instead of flows; link flows are then meaningless.
    """
    comp = net.compiled
    D = comp.demands if demands is None else np.asarray(demands, dtype=float)
    link_flows = np.zeros(comp.n_links)
    layers, all_demands = [], []
    for k, lvl in enumerate(comp.levels):
        c, logA, logZ = cache[k]
        P = level_layer_probs(lvl, c, logA, logZ)
        all_demands.append(D)
        Y = P if unit else D[:, None, None] * P
        layers.append(Y)
        arc = Y.sum(axis=(0, 1))
        link_flows += np.bincount(lvl.link[lvl.cost_arcs], weights=arc[lvl.cost_arcs],
                                  minlength=comp.n_links)
        if k + 1 < comp.m:
            D = np.zeros(comp.levels[k + 1].n_od)
            D[lvl.child[lvl.exp_arcs]] = arc[lvl.exp_arcs]
    return FlowState(link_flows, all_demands, layers)


def soft_values(net: HierNetwork, t) -> SoftValueTable:
    soft, _ = forward_pass(net, t)
    comp = net.compiled
    g_edge = {}
    for k, lvl in enumerate(comp.levels[:-1]):
        for a in lvl.exp_arcs:
            g_edge[lvl.edge_ids[a]] = float(soft[k + 1][lvl.child[a]])
    return SoftValueTable(soft, g_edge)


def soft_flows(net: HierNetwork, t) -> FlowState:
    _, cache = forward_pass(net, t)
    return backward_pass(net, cache)


def smooth_term(net: HierNetwork, t) -> float:
    """Dual smooth term: minus the demand-weighted level-1 soft cost."""
    soft, _ = forward_pass(net, t)
    return float(-net.compiled.demands @ soft[0])


def smooth_term_and_flows(net: HierNetwork, t):
    soft, cache = forward_pass(net, t)
    value = float(-net.compiled.demands @ soft[0])
    return value, backward_pass(net, cache)


def path_cost(net: HierNetwork, t, path, table: SoftValueTable | None = None) -> float:
    """Cost of a :class:`~hiersue.oracle.NestedPath`.

    Expansion edges with an expanded child add the child's cost; expansion
    edges without one use their soft weight from ``table``.
    """
    comp = net.compiled
    t = toll_array(net, t)
    lvl = comp.levels[path.level - 1]
    index = {e: i for i, e in enumerate(lvl.edge_ids)}
    total = 0.0
    for pos, eid in enumerate(path.edges):
        a = index[eid]
        if lvl.is_cost[a]:
            total += t[lvl.link[a]]
        elif pos in path.children:
            total += path_cost(net, t, path.children[pos], table)
        else:
            if table is None:
                table = soft_values(net, t)
            total += table.g_edge[eid]
    return total


def longest_nested_paths(net: HierNetwork) -> list:
    """Max cost-edge count of a hop-bounded nested path, per level-1 OD."""
    comp = net.compiled
    below = None
    for k in range(comp.m - 1, -1, -1):
        lvl = comp.levels[k]
        size = np.zeros(lvl.n_arcs)
        size[lvl.cost_arcs] = 1.0
        if lvl.exp_arcs.size:
            size[lvl.exp_arcs] = below[lvl.child[lvl.exp_arcs]]
        best = np.full((lvl.n_od, lvl.n_nodes), -np.inf)
        best[np.arange(lvl.n_od), lvl.origin] = 0.0
        result = np.full(lvl.n_od, -np.inf)
        for _ in range(lvl.H):
            best = lvl.by_head.max(best[:, lvl.tail] + size)
            result = np.maximum(result, best[np.arange(lvl.n_od), lvl.dest])
        below = result
    return below.tolist()


def lipschitz_bound(net: HierNetwork) -> float:
    """Upper bound on the Lipschitz constant of the dual smooth term's gradient."""
    comp = net.compiled
    longest = np.array(longest_nested_paths(net))
    return float(comp.demands @ longest ** 2 / comp.gamma.min())
