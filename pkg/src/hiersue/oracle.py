"""Brute-force reference computations on explicitly enumerated paths.

Everything here enumerates walks and nested paths and is meant for small test
networks only.  It shares no code with the dynamic programs in
:mod:`hiersue.softpath`, so the two can check each other.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .costlib import CostArrays
from .hiernet import HierNetwork, PathExplosion


class OracleNonconvergence(RuntimeError):
    pass


class InfeasibleConservation(ValueError):
    pass


@dataclass(frozen=True)
class NestedPath:
    """A level-``level`` walk (edge ids) plus the sub-path chosen behind each
    expansion edge, keyed by the edge's position in ``edges``."""
    level: int
    od: int
    edges: tuple
    children: dict = field(default_factory=dict)

    def cost_edges(self, net: HierNetwork) -> list:
        """All cost-edge ids along the fully expanded path, in travel order."""
        lvl = net.levels[self.level - 1]
        kinds = {e.id: e for e in lvl.edges}
        out = []
        for pos, eid in enumerate(self.edges):
            if kinds[eid].cost is not None:
                out.append(eid)
            else:
                out.extend(self.children[pos].cost_edges(net))
        return out

    def size(self, net: HierNetwork) -> int:
        return len(self.cost_edges(net))


def enumerate_walks(net: HierNetwork, level: int, od: int) -> list:
    """Walks (tuples of edge indices) of one OD pair, lexicographic order."""
    lvl = net.levels[level - 1]
    o, d = lvl.od_pairs[od]
    out_edges = {}
    for i, e in enumerate(lvl.edges):
        out_edges.setdefault(e.tail, []).append(i)
    walks = []

    def dfs(v, prefix):
        if len(prefix) == lvl.hop_limit:
            return
        for i in out_edges.get(v, ()):
            p = prefix + (i,)
            if lvl.edges[i].head == d:
                walks.append(p)
            dfs(lvl.edges[i].head, p)

    dfs(o, ())
    return walks


def count_nested_paths(net: HierNetwork, od: int, level: int = 1) -> int:
    """Number of nested paths, by a counting recursion (no enumeration)."""
    memo = {}

    def count(k, w):
        if (k, w) not in memo:
            lvl = net.levels[k - 1]
            o, d = lvl.od_pairs[w]
            mult = [1 if e.cost is not None else count(k + 1, e.expands_to)
                    for e in lvl.edges]
            ways = {o: 1}
            total = 0
            for _ in range(lvl.hop_limit):
                nxt = {}
                for e, mu in zip(lvl.edges, mult):
                    if e.tail in ways and mu:
                        nxt[e.head] = nxt.get(e.head, 0) + ways[e.tail] * mu
                total += nxt.get(d, 0)
                ways = nxt
            memo[(k, w)] = total
        return memo[(k, w)]

    return count(level, od)


def enumerate_nested_paths(net: HierNetwork, od: int, level: int = 1,
                           cap: int = 10**6) -> list:
    """Every nested path of one OD pair, depth-first in edge order."""
    n = count_nested_paths(net, od, level)
    if n > cap:
        raise PathExplosion(f"{n} nested paths exceed the cap {cap}")
    memo = {}

    def expand(k, w):
        if (k, w) not in memo:
            lvl = net.levels[k - 1]
            out = []
            for walk in enumerate_walks(net, k, w):
                slots = [(pos, lvl.edges[i].expands_to) for pos, i in enumerate(walk)
                         if lvl.edges[i].expands_to is not None]
                ids = tuple(lvl.edges[i].id for i in walk)
                choices = [expand(k + 1, child) for _, child in slots]
                for combo in itertools.product(*choices):
                    kids = {pos: c for (pos, _), c in zip(slots, combo)}
                    out.append(NestedPath(k, w, ids, kids))
            memo[(k, w)] = out
        return memo[(k, w)]

    return expand(level, od)


class PathModel:
    """Incidence structure of all walks and level-1 nested paths.

    ``walks`` is a global list of ``(level, od, walk)``; ``M[w]`` maps the
    nested paths of level-1 OD ``w`` to how often each global walk occurs in
    them; ``W`` counts links per global walk, ``E`` counts expansion
    occurrences per global walk and child OD.
    """

    def __init__(self, net: HierNetwork, cap: int = 10_000):
        self.net = net
        comp = net.compiled
        self.links = comp.links
        self.costs: CostArrays = comp.costs
        self.m = net.m
        self.gamma = np.array(net.gamma)
        self.demands = np.array(net.demands)
        self.walks = []
        self.index = {}
        for k in range(1, net.m + 1):
            for w in range(len(net.levels[k - 1].od_pairs)):
                for walk in enumerate_walks(net, k, w):
                    self.index[(k, w, walk)] = len(self.walks)
                    self.walks.append((k, w, walk))
        nw = len(self.walks)
        self.walk_level = np.array([k for k, _, _ in self.walks])
        self.walk_od = np.array([w for _, w, _ in self.walks])
        self.W = np.zeros((nw, comp.n_links))
        for g, (k, w, walk) in enumerate(self.walks):
            lvl = net.levels[k - 1]
            for i in walk:
                e = lvl.edges[i]
                if e.cost is not None:
                    self.W[g, comp.link_index[e.link_id]] += 1
        # per level: walk ids, OD membership and child-OD occurrence counts
        self.level_walks = []
        self.level_E = []
        for k in range(1, net.m + 1):
            ids = np.flatnonzero(self.walk_level == k)
            self.level_walks.append(ids)
            if k < net.m:
                n_child = len(net.levels[k].od_pairs)
                E = np.zeros((ids.size, n_child))
                lvl = net.levels[k - 1]
                for r, g in enumerate(ids):
                    for i in self.walks[g][2]:
                        if lvl.edges[i].expands_to is not None:
                            E[r, lvl.edges[i].expands_to] += 1
                self.level_E.append(E)
            else:
                self.level_E.append(None)
        self.paths, self.M = [], []
        for w in range(len(net.levels[0].od_pairs)):
            ps = enumerate_nested_paths(net, w, cap=cap)
            self.paths.append(ps)
            Mw = np.zeros((len(ps), nw))
            for r, p in enumerate(ps):
                self.add_walk_counts(p, Mw[r])
            self.M.append(Mw)
        self.theta = [Mw @ self.W for Mw in self.M]

    def add_walk_counts(self, p: NestedPath, row):
        lvl = self.net.levels[p.level - 1]
        idx = {e.id: i for i, e in enumerate(lvl.edges)}
        walk = tuple(idx[e] for e in p.edges)
        row[self.index[(p.level, p.od, walk)]] += 1
        for child in p.children.values():
            self.add_walk_counts(child, row)

    # -- logit choice -------------------------------------------------------

    def soft(self, t):
        """Soft costs per level and log-probabilities of every global walk."""
        t = np.asarray(t, dtype=float)
        soft = [None] * self.m
        logp = np.zeros(len(self.walks))
        below = None
        for k in range(self.m, 0, -1):
            ids = self.level_walks[k - 1]
            g = self.W[ids] @ t
            if self.level_E[k - 1] is not None:
                g = g + self.level_E[k - 1] @ below
            gam = self.gamma[k - 1]
            n_od = len(self.net.levels[k - 1].od_pairs)
            ods = self.walk_od[ids]
            S = np.empty(n_od)
            for w in range(n_od):
                mine = ods == w
                lz = logsumexp(-g[mine] / gam)
                S[w] = -gam * lz
                logp[ids[mine]] = -g[mine] / gam - lz
            soft[k - 1] = S
            below = S
        return soft, logp

    def logit(self, t) -> "PathFlowVector":
        _, logp = self.soft(t)
        x = [d * np.exp(Mw @ logp) for d, Mw in zip(self.demands, self.M)]
        return PathFlowVector(x, self)

    def path_costs(self, t) -> list:
        """Deterministic cost of every nested path (all levels summed)."""
        t = np.asarray(t, dtype=float)
        return [th @ t for th in self.theta]


@dataclass
class PathFlowVector:
    """Flows on the level-1 nested paths, one array per level-1 OD."""
    x: list
    model: PathModel

    @property
    def link_flows(self) -> np.ndarray:
        return sum(xw @ th for xw, th in zip(self.x, self.model.theta))

    @property
    def walk_flows(self) -> np.ndarray:
        """Aggregated level-k path flows of every global walk."""
        return sum(xw @ Mw for xw, Mw in zip(self.x, self.model.M))

    def demands(self) -> list:
        """Demand per level and OD implied by the walk flows."""
        pm = self.model
        xw = self.walk_flows
        out = []
        for k in range(1, pm.m + 1):
            n_od = len(pm.net.levels[k - 1].od_pairs)
            ids = pm.level_walks[k - 1]
            out.append(np.bincount(pm.walk_od[ids], weights=xw[ids], minlength=n_od))
        return out

    def as_vector(self) -> np.ndarray:
        return np.concatenate(self.x)


def brute_soft_values(net: HierNetwork, t, model: PathModel | None = None) -> list:
    return (model or PathModel(net)).soft(np.asarray(t, dtype=float))[0]


def brute_flat_soft_value(net: HierNetwork, t, model: PathModel | None = None) -> np.ndarray:
    """``-gamma * log sum exp(-G/gamma)`` over full nested paths (equal gamma)."""
    pm = model or PathModel(net)
    g = net.gamma[0]
    return np.array([-g * logsumexp(-c / g) for c in pm.path_costs(t)])


def primal_objective(net: HierNetwork, x: PathFlowVector, atol: float = 1e-9) -> float:
    """Potential plus entropy terms of every level; ``inf`` past a hard capacity."""
    pm = x.model
    for xw, d in zip(x.x, pm.demands):
        if np.any(xw < -atol) or abs(xw.sum() - d) > atol * max(1.0, d):
            raise InfeasibleConservation("path flows do not sum to the OD demand")
    f = x.link_flows
    value = float(pm.costs.sigma(f).sum())
    if not np.isfinite(value):
        return np.inf
    xw = np.maximum(x.walk_flows, 0.0)
    dem = x.demands()
    d_of_walk = np.array([dem[k - 1][w] for k, w, _ in pm.walks])
    pos = xw > 0
    ent = np.zeros_like(xw)
    ent[pos] = xw[pos] * np.log(xw[pos] / d_of_walk[pos])
    value += float(pm.gamma[pm.walk_level - 1] @ ent)
    return value


def brute_force_equilibrium(net: HierNetwork, tol: float = 1e-10, eta: float = 0.5,
                            gamma_min: float = 1e-3, max_iter: int = 200_000,
                            model: PathModel | None = None) -> PathFlowVector:
    """Damped fixed point of ``x = logit(tau(f(x)))`` with monotone primal value."""
    if min(net.gamma) < gamma_min:
        raise ValueError(f"temperatures below gamma_min={gamma_min} are refused")
    pm = model or PathModel(net)
    if pm.costs.is_cap.any():
        raise ValueError("capacity-limited links need constrained_equilibrium")
    x = pm.logit(pm.costs.t0)
    psi = primal_objective(net, x)

    def residual(z):
        y = pm.logit(pm.costs.tau(z.link_flows))
        step = [b - a for a, b in zip(z.x, y.x)]
        return y, step, max((np.abs(s).max() for s in step), default=0.0)

    def slope(z, step):
        # d/d(eta) psi(z + eta*step); gradients centred per OD keep the terms
        # small near the optimum so the sum has no cancellation
        xw = z.walk_flows
        dem = z.demands()
        d_of_walk = np.array([dem[k - 1][w] for k, w, _ in pm.walks])
        ent = np.zeros_like(xw)
        pos = xw > 0
        ent[pos] = pm.gamma[pm.walk_level[pos] - 1] * np.log(xw[pos] / d_of_walk[pos])
        total = 0.0
        for c, Mw, s in zip(pm.path_costs(pm.costs.tau(z.link_flows)), pm.M, step):
            g = c + Mw @ ent
            total += float((g - g.mean()) @ s)
        return total

    y, step, res = residual(x)
    for _ in range(max_iter):
        if res <= tol:
            return y
        while True:
            cand = PathFlowVector([a + eta * s for a, s in zip(x.x, step)], pm)
            val = primal_objective(net, cand)
            c_y, c_step, c_res = residual(cand)
            # below roundoff of psi, a nonpositive slope at the candidate
            # certifies descent since psi is convex along the segment
            flat = abs(val - psi) <= 1e-13 * (1.0 + abs(psi))
            if val < psi and not flat or flat and slope(cand, step) <= 0:
                x, psi, y, step, res = cand, min(val, psi), c_y, c_step, c_res
                eta = min(1.0, 2.0 * eta)
                break
            eta *= 0.5
            if eta < 1e-14:
                raise OracleNonconvergence(f"no decrease of the primal objective (residual {res:.2e})")
    raise OracleNonconvergence(f"no fixed point within {max_iter} iterations")


def constrained_equilibrium(net: HierNetwork, model: PathModel | None = None,
                            solver: str = "CLARABEL"):
    """Minimise the primal objective directly with cvxpy.

    Returns ``(path_flows, multipliers)`` where ``multipliers`` maps each
    capacity-limited link to the Lagrange multiplier of ``f <= capacity``.
    """
    import cvxpy as cp

    pm = model or PathModel(net)
    costs = pm.costs
    n_paths = [len(p) for p in pm.paths]
    x = cp.Variable(sum(n_paths), nonneg=True)
    parts, start = [], 0
    for n in n_paths:
        parts.append(x[start:start + n])
        start += n
    cons = [cp.sum(xp) == d for xp, d in zip(parts, pm.demands)]
    f = sum(th.T @ xp for xp, th in zip(parts, pm.theta))
    xw = sum(Mw.T @ xp for xp, Mw in zip(parts, pm.M))
    obj = 0
    for j in range(len(costs)):
        t0 = costs.t0[j]
        if costs.is_affine[j]:
            obj += t0 * f[j] + 0.5 * costs.slope[j] * cp.square(f[j])
        elif costs.is_bpr[j]:
            b, c = costs.beta[j], costs.cap[j]
            obj += t0 * f[j] + t0 * costs.alpha[j] * c / (b + 1) * cp.power(f[j] / c, b + 1)
        else:
            obj += t0 * f[j]
    cap_links = np.flatnonzero(costs.is_cap)
    cap_cons = [f[j] <= costs.cap[j] for j in cap_links]
    for k in range(1, pm.m + 1):
        ids = pm.level_walks[k - 1]
        n_od = len(net.levels[k - 1].od_pairs)
        for w in range(n_od):
            g = ids[pm.walk_od[ids] == w]
            if k == 1:
                dw = pm.demands[w]
                if dw > 0:
                    obj += pm.gamma[0] * cp.sum(cp.rel_entr(xw[g], dw * np.ones(g.size)))
            else:
                tot = cp.sum(xw[g])
                obj += pm.gamma[k - 1] * cp.sum(cp.rel_entr(xw[g], cp.hstack([tot] * g.size)))
    prob = cp.Problem(cp.Minimize(obj), cons + cap_cons)
    opts = {"tol_gap_abs": 1e-11, "tol_gap_rel": 1e-11, "tol_feas": 1e-11} if solver == "CLARABEL" else {}
    prob.solve(solver=solver, **opts)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise OracleNonconvergence(f"cvxpy status {prob.status}")
    sol = np.maximum(x.value, 0.0)
    flows, start = [], 0
    for n in n_paths:
        flows.append(sol[start:start + n])
        start += n
    mult = {pm.links[j]: float(c.dual_value) for j, c in zip(cap_links, cap_cons)}
    return PathFlowVector(flows, pm), mult
