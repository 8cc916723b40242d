"""Dual solver for the hierarchical equilibrium with a duality-gap certificate.

The dual is ``min_t phi(t) + sum_e sigma*_e(t_e)`` where ``phi(t)`` is minus
the demand-weighted level-1 soft cost; ``grad phi(t) = -f(t)``.  It is solved
by an accelerated similar-triangles method with a backtracking estimate of
the Lipschitz constant; every conjugate goes into the proximal step.  The
logit flows at the gradient points are averaged with the method's weights
and give the primal side of the certificate.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .costlib import OutOfDomain
from .hiernet import CompiledLevel, HierNetwork
from .softpath import (FlowState, forward_pass, lipschitz_bound, smooth_term,
                       smooth_term_and_flows, toll_array)


class Nonconvergence(RuntimeError):
    """Iteration budget exhausted; ``solution`` holds the partial result."""

    def __init__(self, msg, solution):
        super().__init__(msg)
        self.solution = solution


class InfeasiblePrimal(ValueError):
    pass


@dataclass
class SolverConfig:
    eps: float = 1e-6
    max_iters: int = 20_000
    L0: float | None = None
    line_search_up: float = 2.0
    line_search_down: float = 1.2
    gamma_min: float = 1e-3
    checkpoint_every: int = 1
    raise_on_fail: bool = True

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.line_search_up <= 1 or self.line_search_down <= 1:
            raise ValueError("line-search factors must exceed 1")


@dataclass
class Certificate:
    dual_value: float
    primal_value: float
    gap: float
    iterations: int
    wall_time: float


@dataclass
class EquilibriumSolution:
    net: HierNetwork
    t_star: np.ndarray
    flows: FlowState
    certificate: Certificate
    history: list = field(default_factory=list)
    L: float = float("nan")

    @property
    def link_flows(self) -> np.ndarray:
        return self.flows.link_flows

    @property
    def demands(self) -> list:
        return self.flows.demands

    def toll_dict(self) -> dict:
        return dict(zip(self.net.compiled.links, self.t_star.tolist()))


# -- objective pieces --------------------------------------------------------

def dual_objective(net: HierNetwork, t) -> float:
    t = toll_array(net, t)
    costs = net.compiled.costs
    if not costs.in_domain(t).all():
        bad = [l for l, ok in zip(net.compiled.links, costs.in_domain(t)) if not ok]
        raise OutOfDomain(f"tolls outside the conjugate domain on {bad}")
    return smooth_term(net, t) + float(costs.sigma_star(t).sum())


def level_negentropy(lvl: CompiledLevel, Y: np.ndarray, D: np.ndarray) -> float:
    """``sum_p x_p log(x_p / D)`` of the Markov walk distribution with layer
    flows ``Y`` (chain rule over the hop-expanded states)."""
    n_od, H = lvl.n_od, lvl.H
    F = np.zeros((n_od, H + 1, lvl.n_nodes))
    F[np.arange(n_od), 0, lvl.origin] = D
    F[:, 1:, :] = lvl.by_head.sum(Y)
    out = np.zeros_like(F)
    out[:, :H, :] = lvl.by_tail.sum(Y)
    T = np.where(lvl.terminal, np.maximum(F - out, 0.0), 0.0)
    Y = np.maximum(Y, 0.0)
    mass = out + T
    return float(xlogy(Y, Y).sum() + xlogy(T, T).sum() - xlogy(mass, mass).sum())


def primal_value(net: HierNetwork, flows: FlowState) -> float:
    """Potential plus weighted entropies; ``inf`` past a hard capacity."""
    comp = net.compiled
    value = float(comp.costs.sigma(flows.link_flows).sum())
    if not np.isfinite(value):
        return np.inf
    for lvl, Y, D in zip(comp.levels, flows.layers, flows.demands):
        value += lvl.gamma * level_negentropy(lvl, Y, D)
    return value


def duality_gap(net: HierNetwork, t, flows, strict: bool = False) -> float:
    """Dual value at ``t`` plus primal value of ``flows``.

    ``flows`` is a :class:`FlowState` or an oracle path-flow vector.  A
    capacity violation gives ``inf``, or :class:`InfeasiblePrimal` if
    ``strict``.
    """
    if isinstance(flows, FlowState):
        primal = primal_value(net, flows)
    else:
        from .oracle import primal_objective
        primal = primal_objective(net, flows)
    if not np.isfinite(primal):
        if strict:
            raise InfeasiblePrimal("flows exceed a hard capacity")
        return np.inf
    return dual_objective(net, t) + primal


def tolls(sol: EquilibriumSolution) -> dict:
    """Marginal-cost charges: ``t - t0`` on capacity-limited links, ``f * tau'(f)``
    on smooth ones, zero on constant links."""
    costs = sol.net.compiled.costs
    f = sol.link_flows
    out = f * costs.dtau(f)
    out[costs.is_cap] = np.maximum(sol.t_star - costs.t0, 0.0)[costs.is_cap]
    out[costs.is_const] = 0.0
    return dict(zip(sol.net.compiled.links, out.tolist()))


# -- solver ------------------------------------------------------------------

def _min_slack(costs, f) -> float:
    if not costs.is_cap.any():
        return np.inf
    return float((costs.cap - f)[costs.is_cap].min())


def _repair(costs, avg: FlowState, feasible: FlowState | None):
    """Pull ``avg`` back inside the hard capacities along the segment towards
    a strictly feasible point."""
    f = avg.link_flows
    over = costs.is_cap & (f > costs.cap)
    if not over.any():
        return avg
    if feasible is None:
        return None
    g = feasible.link_flows
    theta = float(((f - costs.cap)[over] / (f - g)[over]).max())
    theta = min(1.0, theta * (1 + 1e-12) + 1e-15)
    return avg.scaled_mix(feasible, theta)


def _clamp_gamma(net: HierNetwork, gamma_min: float) -> HierNetwork:
    if min(net.gamma) >= gamma_min:
        return net
    warnings.warn(f"temperatures below {gamma_min} clamped", RuntimeWarning)
    return net.with_gamma([max(g, gamma_min) for g in net.gamma])


def _zero_like(state: FlowState) -> FlowState:
    return FlowState(np.zeros_like(state.link_flows), [np.zeros_like(d) for d in state.demands],
                     [np.zeros_like(y) for y in state.layers])


def solve(net: HierNetwork, cfg: SolverConfig | None = None) -> EquilibriumSolution:
    cfg = cfg or SolverConfig()
    net = _clamp_gamma(net, cfg.gamma_min)
    comp = net.compiled
    costs = comp.costs
    start = time.perf_counter()

    t0 = costs.t0.copy()
    phi0, flows0 = smooth_term_and_flows(net, t0)
    best_dual, t_best = phi0 + float(costs.sigma_star(t0).sum()), t0
    best_primal, flows_best = primal_value(net, flows0), flows0
    feasible = flows0 if _min_slack(costs, flows0.link_flows) > 0 else None
    history = []

    def record(it):
        gap = best_dual + best_primal
        history.append((it, best_dual, best_primal, gap, time.perf_counter() - start))
        return gap

    gap = record(0)
    L0 = cfg.L0 if cfg.L0 is not None else max(lipschitz_bound(net), 1e-12)
    L, L_min = L0, L0 * 1e-6
    A = 0.0
    y = u = t0
    grad_sum = np.zeros_like(t0)
    avg = _zero_like(flows0)
    it = 0
    while gap > cfg.eps and it < cfg.max_iters:
        it += 1
        L = max(L / cfg.line_search_down, L_min)
        while True:
            a = (1.0 + np.sqrt(1.0 + 4.0 * L * A)) / (2.0 * L)
            A_new = A + a
            x = (A * y + a * u) / A_new
            phi_x, flows_x = smooth_term_and_flows(net, x)
            g = -flows_x.link_flows
            u_new = costs.prox(t0 - (grad_sum + a * g), A_new)
            y_new = (A * y + a * u_new) / A_new
            phi_y, flows_y = smooth_term_and_flows(net, y_new)
            d = y_new - x
            # convexity gives phi(y) <= phi(x) + <g, d> + <g_y - g, d>; testing the
            # last term avoids the cancellation of comparing function values
            g_y = -flows_y.link_flows
            if (g_y - g) @ d <= 0.5 * L * (d @ d):
                break
            L *= cfg.line_search_up
        A, y, u = A_new, y_new, u_new
        grad_sum += a * g
        avg = avg.scaled_mix(flows_x, a / A)
        if costs.is_cap.any():
            slack = _min_slack(costs, flows_x.link_flows)
            if slack > 0 and (feasible is None or slack > _min_slack(costs, feasible.link_flows)):
                feasible = flows_x

        dual_y = phi_y + float(costs.sigma_star(y).sum())
        if dual_y < best_dual:
            best_dual, t_best = dual_y, y
        # the averages carry the rate; logit flows at the dual iterate are
        # often much closer to the optimum and are equally valid primal points
        for cand in (_repair(costs, avg, feasible), _repair(costs, flows_y, feasible)):
            if cand is not None:
                p = primal_value(net, cand)
                if p < best_primal:
                    best_primal, flows_best = p, cand
        if it % cfg.checkpoint_every == 0:
            gap = record(it)
        else:
            gap = best_dual + best_primal
    if history[-1][0] != it:
        record(it)

    cert = Certificate(best_dual, best_primal, gap, it, time.perf_counter() - start)
    sol = EquilibriumSolution(net, t_best, flows_best, cert, history, L)
    if gap > cfg.eps and cfg.raise_on_fail:
        raise Nonconvergence(f"gap {gap:.3e} above eps {cfg.eps:.1e} after {it} iterations", sol)
    return sol


def fixed_point_residual(sol: EquilibriumSolution) -> float:
    """``max |t* - tau(f)|`` over links with a smooth cost."""
    costs = sol.net.compiled.costs
    smooth = costs.is_affine | costs.is_bpr
    if not smooth.any():
        return 0.0
    return float(np.abs(sol.t_star - costs.tau(sol.link_flows))[smooth].max())


def flows_at(net: HierNetwork, t) -> FlowState:
    """Logit flows at tolls ``t``."""
    from .softpath import backward_pass
    _, cache = forward_pass(net, t)
    return backward_pass(net, cache)
