"""Hierarchical network model.

A network is a list of levels.  Level ``k`` is a directed multigraph whose
edges are either *cost* edges (carrying a :class:`~hiersue.costlib.CostParams`)
or *expansion* edges.  Traversing an expansion edge of level ``k`` means
travelling between the two endpoints of one OD pair of level ``k + 1``; the
flow on that edge becomes the demand of that OD pair.  The last level has
cost edges only.

Paths at each level are walks from origin to destination with between 1 and
``hop_limit`` edges.  Several cost edges may share one physical *link* (the
``link`` attribute, defaulting to the edge id); flows and tolls live on links.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Hashable

import numpy as np

from .costlib import CostArrays, CostParams


class NetworkFormatError(ValueError):
    pass


class UnequalTemperatures(ValueError):
    pass


class UnknownNode(KeyError):
    pass


class PathExplosion(RuntimeError):
    pass


@dataclass(frozen=True)
class Edge:
    id: Hashable
    tail: Hashable
    head: Hashable
    cost: CostParams | None = None
    expands_to: int | None = None
    link: Hashable | None = None

    def __post_init__(self):
        if (self.cost is None) == (self.expands_to is None):
            raise ValueError(f"edge {self.id!r} must have exactly one of cost / expands_to")
        if self.expands_to is not None and self.link is not None:
            raise ValueError(f"expansion edge {self.id!r} cannot carry a link")

    @property
    def kind(self) -> str:
        return "cost" if self.cost is not None else "expansion"

    @property
    def link_id(self):
        return self.id if self.link is None else self.link


@dataclass(frozen=True)
class LevelGraph:
    nodes: tuple
    edges: tuple
    od_pairs: tuple
    hop_limit: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "od_pairs", tuple(tuple(w) for w in self.od_pairs))
        if self.hop_limit is None:
            object.__setattr__(self, "hop_limit", max(1, len(self.nodes) - 1))

    def cost_edges(self):
        return [e for e in self.edges if e.cost is not None]

    def expansion_edges(self):
        return [e for e in self.edges if e.expands_to is not None]


@dataclass(frozen=True)
class HierNetwork:
    levels: tuple
    gamma: tuple
    demands: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "demands", tuple(float(d) for d in self.demands))

    @property
    def m(self) -> int:
        return len(self.levels)

    @cached_property
    def compiled(self) -> "CompiledNet":
        report = validate(self)
        if not report.ok:
            raise ValueError("invalid network: " + "; ".join(report.violations))
        return CompiledNet(self)

    @property
    def links(self) -> list:
        return self.compiled.links

    def with_gamma(self, gamma) -> "HierNetwork":
        if np.isscalar(gamma):
            gamma = [gamma] * self.m
        return replace(self, gamma=tuple(gamma))

    def with_demands(self, demands) -> "HierNetwork":
        return replace(self, demands=tuple(demands))

    def scaled_costs(self, c: float) -> "HierNetwork":
        """Multiply every cost (and temperature) by ``c``."""
        levels = []
        for lvl in self.levels:
            edges = [replace(e, cost=e.cost.scaled(c)) if e.cost is not None else e
                     for e in lvl.edges]
            levels.append(replace(lvl, edges=tuple(edges)))
        return HierNetwork(levels, [g * c for g in self.gamma], self.demands)


# -- validation --------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _reachable_within(level: LevelGraph, origin, dest) -> bool:
    frontier = {origin}
    for _ in range(level.hop_limit):
        nxt = set()
        for e in level.edges:
            if e.tail in frontier:
                if e.head == dest:
                    return True
                nxt.add(e.head)
        frontier = nxt
        if not frontier:
            return False
    return False


def validate(net: HierNetwork) -> ValidationReport:
    """Collect structural violations; an empty report means the net is usable."""
    rep = ValidationReport()
    bad = rep.violations.append
    m = len(net.levels)
    if m < 1:
        bad("empty network: at least one level required")
        return rep
    if len(net.gamma) != m:
        bad(f"gamma has {len(net.gamma)} entries for {m} levels")
    for k, g in enumerate(net.gamma, 1):
        if not g > 0:
            bad(f"nonpositive temperature: gamma[{k}] = {g}")
    if len(net.demands) != len(net.levels[0].od_pairs):
        bad(f"demands has {len(net.demands)} entries for "
            f"{len(net.levels[0].od_pairs)} level-1 OD pairs")
    for i, d in enumerate(net.demands):
        if not d >= 0:
            bad(f"negative demand: OD {i} has demand {d}")

    seen_ids = set()
    link_params = {}
    for k, lvl in enumerate(net.levels, 1):
        nodes = set(lvl.nodes)
        if len(nodes) != len(lvl.nodes):
            bad(f"level {k}: duplicate node ids")
        if not (isinstance(lvl.hop_limit, int) and lvl.hop_limit >= 1):
            bad(f"level {k}: hop_limit must be a positive integer")
            continue
        targets = {}
        for e in lvl.edges:
            if e.id in seen_ids:
                bad(f"duplicate edge id {e.id!r}")
            seen_ids.add(e.id)
            for end in (e.tail, e.head):
                if end not in nodes:
                    bad(f"level {k}: edge {e.id!r} endpoint {end!r} is not a declared node")
            if e.expands_to is not None:
                nxt = net.levels[k].od_pairs if k < m else ()
                if k == m or not (0 <= e.expands_to < len(nxt)):
                    bad(f"dangling expansion: level {k} edge {e.id!r} -> OD {e.expands_to}")
                elif e.expands_to in targets:
                    bad(f"level {k}: edges {targets[e.expands_to]!r} and {e.id!r} "
                        f"expand to the same OD {e.expands_to}")
                else:
                    targets[e.expands_to] = e.id
            else:
                prev = link_params.setdefault(e.link_id, e.cost)
                if prev != e.cost:
                    bad(f"link {e.link_id!r} carries inconsistent cost params")
        for i, (o, d) in enumerate(lvl.od_pairs):
            if o not in nodes or d not in nodes:
                bad(f"level {k}: OD {i} ({o!r}, {d!r}) uses an undeclared node")
            elif not _reachable_within(lvl, o, d):
                bad(f"unreachable OD: level {k} OD {i} ({o!r}, {d!r}) "
                    f"within {lvl.hop_limit} hops")
    return rep


# -- file format -------------------------------------------------------------

_TOP_KEYS = {"levels", "gamma", "demands"}
_LEVEL_KEYS = {"nodes", "edges", "od_pairs", "hop_limit"}
_EDGE_KEYS = {"id", "tail", "head", "kind", "cost", "expands_to", "link"}


def _check_keys(d, allowed, where, required=()):
    if not isinstance(d, dict):
        raise NetworkFormatError(f"{where}: expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise NetworkFormatError(f"{where}: unknown key {extra[0]!r}")
    for key in required:
        if key not in d:
            raise NetworkFormatError(f"{where}: missing key {key!r}")


def _hashable(x):
    return tuple(x) if isinstance(x, list) else x


def network_from_dict(d: dict) -> HierNetwork:
    _check_keys(d, _TOP_KEYS, "network", required=("levels", "gamma", "demands"))
    levels = []
    for k, ld in enumerate(d["levels"], 1):
        where = f"levels[{k - 1}]"
        _check_keys(ld, _LEVEL_KEYS, where, required=("nodes", "edges", "od_pairs"))
        edges = []
        for j, ed in enumerate(ld["edges"]):
            ew = f"{where}.edges[{j}]"
            _check_keys(ed, _EDGE_KEYS, ew, required=("id", "tail", "head", "kind"))
            kind = ed["kind"]
            if kind == "cost":
                if "cost" not in ed or "expands_to" in ed:
                    raise NetworkFormatError(f"{ew}: cost edge needs 'cost' and no 'expands_to'")
                try:
                    cost = CostParams.from_dict(ed["cost"])
                except (ValueError, TypeError) as exc:
                    raise NetworkFormatError(f"{ew}.cost: {exc}") from None
                edges.append(Edge(_hashable(ed["id"]), _hashable(ed["tail"]),
                                  _hashable(ed["head"]), cost=cost,
                                  link=_hashable(ed.get("link"))))
            elif kind == "expansion":
                if "expands_to" not in ed or "cost" in ed or "link" in ed:
                    raise NetworkFormatError(
                        f"{ew}: expansion edge needs 'expands_to' and no 'cost'/'link'")
                edges.append(Edge(_hashable(ed["id"]), _hashable(ed["tail"]),
                                  _hashable(ed["head"]), expands_to=int(ed["expands_to"])))
            else:
                raise NetworkFormatError(f"{ew}: unknown kind {kind!r}")
        ods = []
        for w in ld["od_pairs"]:
            if not (isinstance(w, (list, tuple)) and len(w) == 2):
                raise NetworkFormatError(f"{where}.od_pairs: expected [origin, destination]")
            ods.append((_hashable(w[0]), _hashable(w[1])))
        hop = ld.get("hop_limit")
        if hop is not None and not (isinstance(hop, int) and hop >= 1):
            raise NetworkFormatError(f"{where}.hop_limit: expected a positive integer")
        levels.append(LevelGraph([_hashable(v) for v in ld["nodes"]], edges, ods, hop))
    try:
        return HierNetwork(levels, [float(g) for g in d["gamma"]],
                           [float(x) for x in d["demands"]])
    except (TypeError, ValueError) as exc:
        raise NetworkFormatError(f"network: {exc}") from None


def network_to_dict(net: HierNetwork) -> dict:
    levels = []
    for lvl in net.levels:
        edges = []
        for e in lvl.edges:
            ed = {"id": e.id, "tail": e.tail, "head": e.head, "kind": e.kind}
            if e.cost is not None:
                ed["cost"] = e.cost.to_dict()
                if e.link is not None and e.link != e.id:
                    ed["link"] = e.link
            else:
                ed["expands_to"] = e.expands_to
            edges.append(ed)
        levels.append({"nodes": list(lvl.nodes), "edges": edges,
                       "od_pairs": [list(w) for w in lvl.od_pairs],
                       "hop_limit": lvl.hop_limit})
    return {"levels": levels, "gamma": list(net.gamma), "demands": list(net.demands)}


def load_network(path) -> HierNetwork:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"{path}: not valid JSON ({exc})") from None
    return network_from_dict(data)


def dump_network(net: HierNetwork, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=1)
        fh.write("\n")


# -- compiled arrays ---------------------------------------------------------

class Segments:
    """Group-wise reductions over the last axis (items grouped by integer key)."""

    def __init__(self, keys, n_groups: int):
        keys = np.asarray(keys, dtype=np.int64)
        self.n = n_groups
        self.order = np.argsort(keys, kind="stable")
        sk = keys[self.order]
        self.groups, self.starts, self.counts = np.unique(sk, return_index=True,
                                                          return_counts=True)
        self.empty = keys.size == 0

    def _scatter(self, res, fill):
        out = np.full(res.shape[:-1] + (self.n,), fill)
        out[..., self.groups] = res
        return out

    def logsumexp(self, vals):
        if self.empty:
            return np.full(vals.shape[:-1] + (self.n,), -np.inf)
        v = vals[..., self.order]
        mx = np.maximum.reduceat(v, self.starts, axis=-1)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        with np.errstate(divide="ignore"):
            s = np.add.reduceat(np.exp(v - np.repeat(mx, self.counts, axis=-1)),
                                self.starts, axis=-1)
            res = np.log(s) + mx
        return self._scatter(res, -np.inf)

    def sum(self, vals):
        if self.empty:
            return np.zeros(vals.shape[:-1] + (self.n,))
        res = np.add.reduceat(vals[..., self.order], self.starts, axis=-1)
        return self._scatter(res, 0.0)

    def max(self, vals, fill=-np.inf):
        if self.empty:
            return np.full(vals.shape[:-1] + (self.n,), fill)
        res = np.maximum.reduceat(vals[..., self.order], self.starts, axis=-1)
        return self._scatter(res, fill)


class CompiledLevel:
    def __init__(self, lvl: LevelGraph, gamma: float, link_index: dict):
        self.gamma = gamma
        self.H = lvl.hop_limit
        self.nodes = list(lvl.nodes)
        self.node_index = {v: i for i, v in enumerate(self.nodes)}
        self.n_nodes = len(self.nodes)
        self.edge_ids = [e.id for e in lvl.edges]
        self.edges = list(lvl.edges)
        self.n_arcs = len(lvl.edges)
        self.tail = np.array([self.node_index[e.tail] for e in lvl.edges], dtype=np.int64)
        self.head = np.array([self.node_index[e.head] for e in lvl.edges], dtype=np.int64)
        self.is_cost = np.array([e.cost is not None for e in lvl.edges], dtype=bool)
        self.link = np.array([link_index[e.link_id] if e.cost is not None else -1
                              for e in lvl.edges], dtype=np.int64)
        self.child = np.array([e.expands_to if e.expands_to is not None else -1
                               for e in lvl.edges], dtype=np.int64)
        self.cost_arcs = np.flatnonzero(self.is_cost)
        self.exp_arcs = np.flatnonzero(~self.is_cost)
        self.od_pairs = list(lvl.od_pairs)
        self.n_od = len(lvl.od_pairs)
        self.origin = np.array([self.node_index[o] for o, _ in lvl.od_pairs], dtype=np.int64)
        self.dest = np.array([self.node_index[d] for _, d in lvl.od_pairs], dtype=np.int64)
        self.by_head = Segments(self.head, self.n_nodes)
        self.by_tail = Segments(self.tail, self.n_nodes)
        # terminal[od, h, v]: a walk may stop at v after h >= 1 steps
        self.terminal = np.zeros((self.n_od, self.H + 1, self.n_nodes), dtype=bool)
        for i, d in enumerate(self.dest):
            self.terminal[i, 1:, d] = True


class CompiledNet:
    """Array form of a validated :class:`HierNetwork`."""

    def __init__(self, net: HierNetwork):
        links, params = [], []
        index = {}
        for lvl in net.levels:
            for e in lvl.edges:
                if e.cost is not None and e.link_id not in index:
                    index[e.link_id] = len(links)
                    links.append(e.link_id)
                    params.append(e.cost)
        self.links = links
        self.link_index = index
        self.costs = CostArrays(params)
        self.n_links = len(links)
        self.gamma = np.array(net.gamma)
        self.demands = np.array(net.demands)
        self.levels = [CompiledLevel(lvl, g, index) for lvl, g in zip(net.levels, net.gamma)]
        self.m = len(self.levels)
        # level of the first edge using each link, for reporting
        self.link_level = np.zeros(self.n_links, dtype=np.int64)
        seen = set()
        for k, lvl in enumerate(self.levels):
            for li in lvl.link[lvl.cost_arcs]:
                if li not in seen:
                    seen.add(li)
                    self.link_level[li] = k + 1

    @property
    def free_flow(self):
        return self.costs.t0.copy()


# -- flatten -----------------------------------------------------------------

def flatten(net: HierNetwork) -> HierNetwork:
    """Collapse an equal-temperature hierarchy into one level.

    Each expansion edge is replaced by a copy of the lower-level walks for its
    OD pair.  To keep the walk sets exactly equal under per-level hop limits,
    the copy is unrolled by hop count, so the flattened level is a DAG whose
    cost edges alias the original links.  A one-level net is returned as is.
    """
    g0 = net.gamma[0]
    if any(g != g0 for g in net.gamma):
        raise UnequalTemperatures(f"flatten needs equal temperatures, got {net.gamma}")
    if net.m == 1:
        return net
    report = validate(net)
    if not report.ok:
        raise ValueError("invalid network: " + "; ".join(report.violations))

    nodes, edges = [], []
    counter = {"node": 0, "edge": 0}

    def new_node(label):
        name = f"n{counter['node']}:{label}"
        counter["node"] += 1
        nodes.append(name)
        return name

    def splice(k, od, entry, exit_):
        lvl = net.levels[k]
        o, d = lvl.od_pairs[od]
        H = lvl.hop_limit
        # can_go[h]: nodes from which some walk continues at step h and stops at d
        can_go = [set() for _ in range(H + 1)]
        for h in range(H - 1, -1, -1):
            for e in lvl.edges:
                if e.head == d or (h + 1 < H and e.head in can_go[h + 1]):
                    can_go[h].add(e.tail)
        names = {(o, 0): entry}
        frontier = {o} if o in can_go[0] else set()
        for h in range(H):
            nxt = set()
            for e in lvl.edges:
                if e.tail not in frontier:
                    continue
                src = names[(e.tail, h)]
                targets = []
                if e.head == d:
                    targets.append(exit_)
                if h + 1 < H and e.head in can_go[h + 1]:
                    key = (e.head, h + 1)
                    if key not in names:
                        names[key] = new_node(f"{k + 1}.{od}.{e.head}@{h + 1}")
                    targets.append(names[key])
                    nxt.add(e.head)
                for tgt in targets:
                    if e.cost is not None:
                        eid = f"{e.id}#{counter['edge']}"
                        counter["edge"] += 1
                        edges.append(Edge(eid, src, tgt, cost=e.cost, link=e.link_id))
                    else:
                        splice(k + 1, e.expands_to, src, tgt)
            frontier = nxt

    ods = []
    for w in range(len(net.levels[0].od_pairs)):
        s = new_node(f"o{w}")
        t = new_node(f"d{w}")
        splice(0, w, s, t)
        ods.append((s, t))

    # longest walk in the DAG bounds every path
    out = {}
    for e in edges:
        out.setdefault(e.tail, []).append(e.head)
    depth = {}

    def longest(v):
        if v not in depth:
            depth[v] = max((1 + longest(u) for u in out.get(v, ())), default=0)
        return depth[v]

    hop = max(1, max((longest(s) for s, _ in ods), default=1))
    flat = LevelGraph(nodes, edges, ods, hop)
    return HierNetwork([flat], [g0], net.demands)


# -- augment -----------------------------------------------------------------

@dataclass(frozen=True)
class CommonSource:
    """New level-1 origin feeding existing origins through constant-cost edges."""
    node: Hashable
    feeds: dict


@dataclass(frozen=True)
class CommonSink:
    node: Hashable
    feeds: dict  # existing destination -> constant cost of the edge into ``node``


@dataclass(frozen=True)
class OptOut:
    """Constant-cost edge origin -> destination per level-1 OD (elastic demand)."""
    cost: float = 0.0
    ods: tuple | None = None


@dataclass(frozen=True)
class NodeExpansion:
    level: int
    node: Hashable
    cost: float


@dataclass(frozen=True)
class AugmentSpec:
    common_source: CommonSource | None = None
    common_sink: CommonSink | None = None
    opt_out: OptOut | None = None
    expand_nodes: tuple = ()


def _expand_node(lvl: LevelGraph, k: int, v, cost: float) -> LevelGraph:
    if v not in lvl.nodes:
        raise UnknownNode(f"level {k}: node {v!r}")
    if any(v in w for w in lvl.od_pairs):
        raise ValueError(f"level {k}: node {v!r} is an OD endpoint and cannot be expanded")
    ins = [e for e in lvl.edges if e.head == v]
    outs = [e for e in lvl.edges if e.tail == v]
    edges = []
    for e in lvl.edges:
        tail = f"{v}|out|{e.id}" if e.tail == v else e.tail
        head = f"{v}|in|{e.id}" if e.head == v else e.head
        edges.append(replace(e, tail=tail, head=head))
    for a in ins:
        for b in outs:
            edges.append(Edge(f"{v}|{a.id}>{b.id}", f"{v}|in|{a.id}", f"{v}|out|{b.id}",
                              cost=CostParams.constant(cost)))
    nodes = [u for u in lvl.nodes if u != v]
    nodes += [f"{v}|in|{a.id}" for a in ins] + [f"{v}|out|{b.id}" for b in outs]
    # each traversal of v now costs one extra hop
    return LevelGraph(nodes, edges, lvl.od_pairs, 2 * lvl.hop_limit)


def augment(net: HierNetwork, spec: AugmentSpec) -> HierNetwork:
    levels = list(net.levels)
    for ne in spec.expand_nodes:
        if not 1 <= ne.level <= len(levels):
            raise ValueError(f"no level {ne.level}")
        levels[ne.level - 1] = _expand_node(levels[ne.level - 1], ne.level, ne.node, ne.cost)

    top = levels[0]
    nodes, edges = list(top.nodes), list(top.edges)
    ods, demands = list(top.od_pairs), list(net.demands)
    hop = top.hop_limit

    if spec.opt_out is not None:
        which = range(len(ods)) if spec.opt_out.ods is None else spec.opt_out.ods
        for w in which:
            o, d = ods[w]
            edges.append(Edge(f"optout{w}", o, d, cost=CostParams.constant(spec.opt_out.cost)))

    def merge(new_ods):
        merged, dem = [], []
        for w, dd in zip(new_ods, demands):
            if w in merged:
                dem[merged.index(w)] += dd
            else:
                merged.append(w)
                dem.append(dd)
        return merged, dem

    for recipe, is_source in ((spec.common_source, True), (spec.common_sink, False)):
        if recipe is None:
            continue
        if recipe.node in nodes:
            raise ValueError(f"node {recipe.node!r} already exists")
        for u, c in recipe.feeds.items():
            if u not in nodes:
                raise UnknownNode(f"level 1: node {u!r}")
            if is_source:
                edges.append(Edge(f"{recipe.node}->{u}", recipe.node, u,
                                  cost=CostParams.constant(c)))
            else:
                edges.append(Edge(f"{u}->{recipe.node}", u, recipe.node,
                                  cost=CostParams.constant(c)))
        nodes.append(recipe.node)
        hop += 1
        if is_source:
            new = [(recipe.node, d) if o in recipe.feeds else (o, d) for o, d in ods]
        else:
            new = [(o, recipe.node) if d in recipe.feeds else (o, d) for o, d in ods]
        ods, demands = merge(new)

    levels[0] = LevelGraph(nodes, edges, ods, hop)
    return HierNetwork(levels, net.gamma, demands)
