"""Population dynamics: mean-field logit ODE, a finite-population Markov chain
of revising agents, and Gumbel choice sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .dualsolve import primal_value
from .hiernet import HierNetwork
from .oracle import PathModel, enumerate_nested_paths
from .softpath import FlowState, _arc_costs, level_forward, level_layer_probs

EULER_GAMMA = float(np.euler_gamma)


class UnstableStep(ValueError):
    pass


class ProbabilityOverflow(ValueError):
    pass


@dataclass
class DynamicsConfig:
    lambdas: tuple = (1.0,)
    horizon: float = 50.0
    ode_step: float = 0.05
    agents_per_unit: int = 1000
    steps_per_unit: int = 10
    seed: int = 0
    record_every: int = 1
    stop_tol: float | None = None

    def __post_init__(self):
        self.lambdas = tuple(float(l) for l in np.atleast_1d(self.lambdas))
        if any(l < 0 for l in self.lambdas):
            raise ValueError("revision rates must be nonnegative")
        if self.ode_step <= 0 or self.horizon < 0:
            raise ValueError("step and horizon must be positive")

    def rates(self, m: int) -> np.ndarray:
        lam = np.array(self.lambdas, dtype=float)
        if lam.size == 1:
            lam = np.full(m, lam[0])
        if lam.size != m:
            raise ValueError(f"need {m} revision rates, got {lam.size}")
        return lam

    def timescale_ratios(self) -> list:
        lam = self.lambdas
        return [b / a if a > 0 else np.inf for a, b in zip(lam, lam[1:])]


@dataclass
class Trajectory:
    times: np.ndarray
    link_flows: np.ndarray
    lyapunov: np.ndarray | None = None
    states: list = field(default_factory=list)
    final: FlowState | None = None


# -- mean-field ODE ----------------------------------------------------------

def _flows_from_probs(net: HierNetwork, probs: list) -> FlowState:
    comp = net.compiled
    D = comp.demands
    link_flows = np.zeros(comp.n_links)
    layers, demands = [], []
    for k, (lvl, P) in enumerate(zip(comp.levels, probs)):
        Y = D[:, None, None] * P
        demands.append(D)
        layers.append(Y)
        arc = Y.sum(axis=(0, 1))
        link_flows += np.bincount(lvl.link[lvl.cost_arcs], weights=arc[lvl.cost_arcs],
                                  minlength=comp.n_links)
        if k + 1 < comp.m:
            D = np.zeros(comp.levels[k + 1].n_od)
            D[lvl.child[lvl.exp_arcs]] = arc[lvl.exp_arcs]
    return FlowState(link_flows, demands, layers)


def logit_targets(net: HierNetwork, t, inclusive: bool = True) -> list:
    """Unit-mass layer probabilities of the nested logit choice at tolls ``t``.

    With ``inclusive=False`` expansion edges weigh nothing, which with zero
    tolls gives the uniform distribution over walks.
    """
    comp = net.compiled
    out = [None] * comp.m
    below = np.zeros(comp.levels[-1].n_od)
    for k in range(comp.m - 1, -1, -1):
        lvl = comp.levels[k]
        c = _arc_costs(lvl, t, below if inclusive else np.zeros_like(below))
        logA, logZ = level_forward(lvl, c)
        out[k] = level_layer_probs(lvl, c, logA, logZ)
        below = -lvl.gamma * logZ
    return out


def ode_integrate(net: HierNetwork, cfg: DynamicsConfig, start: list | None = None) -> Trajectory:
    """Explicit Euler on ``dP_k/dt = lambda_k (logit_k(tau(f(P))) - P_k)``.

    The state is the unit-mass layer probabilities per level, so demand is
    conserved at every level by construction.  ``lyapunov`` holds the primal
    objective along the path; it is only guaranteed to descend on single-level
    (or flattened equal-temperature) networks.
    """
    comp = net.compiled
    lam = cfg.rates(comp.m)
    h = cfg.ode_step
    if h * lam.max() >= 1.0:
        raise UnstableStep(f"h * max(lambda) = {h * lam.max():g} must be below 1")
    probs = start or logit_targets(net, np.zeros(comp.n_links), inclusive=False)
    n_steps = int(round(cfg.horizon / h))
    times, flows, lyap, states = [], [], [], []
    state = _flows_from_probs(net, probs)

    def record(s, st):
        times.append(s * h)
        flows.append(st.link_flows.copy())
        lyap.append(primal_value(net, st))
        states.append([p.copy() for p in probs])

    record(0, state)
    for s in range(1, n_steps + 1):
        target = logit_targets(net, comp.costs.tau(state.link_flows))
        drift = [l * (T - P) for l, T, P in zip(lam, target, probs)]
        probs = [P + h * d for P, d in zip(probs, drift)]
        state = _flows_from_probs(net, probs)
        done = cfg.stop_tol is not None and max(np.abs(d).max() for d in drift) < cfg.stop_tol
        if s % cfg.record_every == 0 or s == n_steps or done:
            record(s, state)
        if done:
            break
    return Trajectory(np.array(times), np.array(flows), np.array(lyap), states, state)


# -- finite population chain -------------------------------------------------

class _Slot(NamedTuple):
    level: int
    od: int
    route: tuple  # positions from the level-1 walk down to this sub-path


class _ChainModel:
    """Nested paths of every OD at every level plus the table that swaps one
    sub-path of a level-1 nested path for another."""

    def __init__(self, net: HierNetwork, cap: int = 10_000):
        self.pm = PathModel(net, cap=cap)
        pm = self.pm
        self.sub = {}  # (k, od) -> (list of nested paths, incidence to global walks)
        for k in range(1, net.m + 1):
            for w in range(len(net.levels[k - 1].od_pairs)):
                ps = enumerate_nested_paths(net, w, level=k, cap=cap)
                Mk = np.zeros((len(ps), len(pm.walks)))
                for r, p in enumerate(ps):
                    pm.add_walk_counts(p, Mk[r])
                self.sub[(k, w)] = (ps, Mk, {_key(p): i for i, p in enumerate(ps)})
        # global index over level-1 nested paths
        self.paths, self.offset = [], []
        for w, ps in enumerate(pm.paths):
            self.offset.append(len(self.paths))
            self.paths.extend(ps)
        self.path_od = np.concatenate([np.full(len(ps), w) for w, ps in enumerate(pm.paths)])
        self.theta = np.vstack(pm.theta)
        index = {(int(self.path_od[i]), _key(p)): i for i, p in enumerate(self.paths)}
        self.slots = []
        self.swap = []
        for i, p in enumerate(self.paths):
            slots, swaps = [], []
            for slot, node in _subtrees(p, ()):
                if slot == ():
                    continue
                ps = self.sub[(node.level, node.od)][0]
                tgt = [index[(int(self.path_od[i]), _key(_replace(p, slot, q)))] for q in ps]
                slots.append(_Slot(node.level, node.od, slot))
                swaps.append(np.array(tgt))
            self.slots.append(slots)
            self.swap.append(swaps)

    def choice_probs(self, t) -> dict:
        _, logp = self.pm.soft(t)
        return {key: np.exp(Mk @ logp) for key, (_, Mk, _) in self.sub.items()}


def _key(p):
    return (p.edges, tuple(sorted((pos, _key(c)) for pos, c in p.children.items())))


def _subtrees(p, route):
    yield route, p
    for pos in sorted(p.children):
        yield from _subtrees(p.children[pos], route + (pos,))


def _replace(p, route, q):
    if not route:
        return q
    kids = dict(p.children)
    kids[route[0]] = _replace(kids[route[0]], route[1:], q)
    return type(p)(p.level, p.od, p.edges, kids)


def simulate_agents(net: HierNetwork, cfg: DynamicsConfig, model: _ChainModel | None = None) -> Trajectory:
    """Discrete logit revision chain with ``agents_per_unit`` agents per unit demand.

    Each step every agent independently re-draws, with probability
    ``lambda_k / N`` per level-k sub-path it holds, that sub-path from the
    current logit choice; the level-1 draw replaces the whole nested path.
    Agents are exchangeable, so one step is a multinomial draw per nested path.
    """
    model = model or _ChainModel(net)
    comp = net.compiled
    lam = cfg.rates(comp.m)
    N = cfg.steps_per_unit
    load = max(lam[0] + sum(lam[s.level - 1] for s in slots) for slots in model.slots)
    if load / N > 1.0:
        raise ProbabilityOverflow(f"revision probability {load / N:g} exceeds 1")
    rng = np.random.default_rng(cfg.seed)
    M = cfg.agents_per_unit
    n_paths = len(model.paths)
    counts = np.zeros(n_paths, dtype=np.int64)
    for w, d in enumerate(comp.demands):
        n = len(model.pm.paths[w])
        counts[model.offset[w]:model.offset[w] + n] = rng.multinomial(int(round(M * d)), np.full(n, 1.0 / n))
    n_steps = int(round(cfg.horizon * N))
    times, flows = [0.0], [counts @ model.theta / M]
    for s in range(1, n_steps + 1):
        t = comp.costs.tau(counts @ model.theta / M)
        probs = model.choice_probs(t)
        new = counts.copy()
        for i in np.flatnonzero(counts):
            w = int(model.path_od[i])
            dests = [model.offset[w] + np.arange(len(model.pm.paths[w]))]
            pr = [lam[0] / N * probs[(1, w)]]
            for slot, tgt in zip(model.slots[i], model.swap[i]):
                dests.append(tgt)
                pr.append(lam[slot.level - 1] / N * probs[(slot.level, slot.od)])
            dests = np.concatenate(dests)
            pr = np.concatenate(pr)
            stay = max(0.0, 1.0 - pr.sum())
            moves = rng.multinomial(counts[i], np.append(pr, stay))
            new[i] -= moves[:-1].sum()
            np.add.at(new, dests, moves[:-1])
        counts = new
        if s % cfg.record_every == 0 or s == n_steps:
            times.append(s / N)
            flows.append(counts @ model.theta / M)
    return Trajectory(np.array(times), np.array(flows), states=[counts])


# -- Gumbel choice -----------------------------------------------------------

def gumbel_noise(gamma: float, size, rng) -> np.ndarray:
    """Zero-mean Gumbel noise of scale ``gamma``."""
    return rng.gumbel(loc=-gamma * EULER_GAMMA, scale=gamma, size=size)


def sample_gumbel_choice(costs, gamma: float, rng, size=None):
    """``argmax_p (-g_p + xi_p)``; the choice frequencies follow ``softmax(-g/gamma)``."""
    g = np.asarray(costs, dtype=float)
    if g.size == 0:
        raise ValueError("no alternatives")
    shape = (g.size,) if size is None else (int(size), g.size)
    idx = np.argmax(-g + gumbel_noise(gamma, shape, rng), axis=-1)
    return int(idx) if size is None else idx


class GumbelCheck(NamedTuple):
    mc_mean: float
    analytic: float
    stderr: float


def gumbel_expectation_check(costs, gamma: float, samples: int, rng,
                             chunk: int = 200_000) -> GumbelCheck:
    """Monte-Carlo mean of ``max_p(-g_p + xi_p)`` against ``gamma*log sum exp(-g/gamma)``."""
    if samples < 10_000:
        raise ValueError("use at least 10^4 samples")
    g = np.asarray(costs, dtype=float)
    total = total_sq = 0.0
    left = samples
    while left:
        n = min(chunk, left)
        mx = (-g + gumbel_noise(gamma, (n, g.size), rng)).max(axis=1)
        total += mx.sum()
        total_sq += (mx ** 2).sum()
        left -= n
    mean = total / samples
    var = max(total_sq / samples - mean ** 2, 0.0)
    analytic = gamma * logsumexp(-g / gamma)
    return GumbelCheck(mean, float(analytic), float(np.sqrt(var / samples)))
