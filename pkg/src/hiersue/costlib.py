"""Separable edge cost families.

Every cost edge carries one of four analytic families.  For each family this
module provides the cost ``tau(f)``, its potential ``sigma(f) = int_0^f tau``,
the Legendre conjugate ``sigma_star(t)``, the inverse of ``tau`` and the
proximal map of ``sigma_star`` used by the dual solver.

Scalar functions take a :class:`CostParams`; :class:`CostArrays` holds the same
maths vectorised over all links of a network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

CONSTANT, AFFINE, BPR, CAPACITY_LIMITED = 0, 1, 2, 3
FAMILIES = {"constant": CONSTANT, "affine": AFFINE, "bpr": BPR,
            "capacity_limited": CAPACITY_LIMITED}

# Allowed keys per family in the network file (besides "family").
FAMILY_FIELDS = {
    "constant": ("free_flow",),
    "affine": ("free_flow", "slope"),
    "bpr": ("free_flow", "capacity", "alpha", "beta"),
    "capacity_limited": ("free_flow", "capacity"),
}


class CapacityExceeded(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


class Interval(NamedTuple):
    """Subdifferential of ``sigma_star`` where ``tau`` is not invertible."""
    lo: float
    hi: float


@dataclass(frozen=True)
class CostParams:
    family: str
    free_flow: float
    slope: float = 0.0
    capacity: float = math.inf
    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown cost family {self.family!r}")
        if not math.isfinite(self.free_flow):
            raise ValueError("free_flow must be finite")
        if self.family == "affine" and self.slope < 0:
            raise ValueError("affine slope must be >= 0")
        if self.family in ("bpr", "capacity_limited") and not self.capacity > 0:
            raise ValueError("capacity must be > 0")
        if self.family == "bpr":
            if not self.alpha > 0:
                raise ValueError("bpr alpha must be > 0")
            if not self.beta >= 1:
                raise ValueError("bpr beta must be >= 1")
            if not self.free_flow > 0:
                raise ValueError("bpr free_flow must be > 0")

    @classmethod
    def constant(cls, free_flow):
        return cls("constant", float(free_flow))

    @classmethod
    def affine(cls, free_flow, slope):
        return cls("affine", float(free_flow), slope=float(slope))

    @classmethod
    def bpr(cls, free_flow, capacity, alpha=0.15, beta=4.0):
        return cls("bpr", float(free_flow), capacity=float(capacity),
                   alpha=float(alpha), beta=float(beta))

    @classmethod
    def capacity_limited(cls, free_flow, capacity):
        return cls("capacity_limited", float(free_flow), capacity=float(capacity))

    @property
    def code(self) -> int:
        # a flat affine cost is a constant for every purpose below
        if self.family == "affine" and self.slope == 0:
            return CONSTANT
        return FAMILIES[self.family]

    def scaled(self, c: float) -> "CostParams":
        """Same family with the cost axis multiplied by ``c`` (flows unchanged)."""
        return CostParams(self.family, self.free_flow * c, slope=self.slope * c,
                          capacity=self.capacity, alpha=self.alpha, beta=self.beta)

    def to_dict(self) -> dict:
        out = {"family": self.family}
        for key in FAMILY_FIELDS[self.family]:
            out[key] = getattr(self, key)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CostParams":
        d = dict(d)
        family = d.pop("family", None)
        if family not in FAMILY_FIELDS:
            raise ValueError(f"unknown cost family {family!r}")
        allowed = FAMILY_FIELDS[family]
        extra = set(d) - set(allowed)
        if extra:
            raise ValueError(f"unknown key(s) {sorted(extra)} for family {family!r}")
        missing = [k for k in allowed if k not in d and k not in ("alpha", "beta")]
        if missing:
            raise ValueError(f"missing key(s) {missing} for family {family!r}")
        return cls(family, **{k: float(v) for k, v in d.items()})


class CostArrays:
    """Vectorised cost maths over a list of :class:`CostParams`."""

    def __init__(self, params):
        params = list(params)
        self.params = params
        self.code = np.array([p.code for p in params], dtype=np.int64)
        self.t0 = np.array([p.free_flow for p in params], dtype=float)
        self.slope = np.array([p.slope for p in params], dtype=float)
        self.cap = np.array([p.capacity for p in params], dtype=float)
        self.alpha = np.array([p.alpha for p in params], dtype=float)
        self.beta = np.array([p.beta for p in params], dtype=float)
        self.is_const = self.code == CONSTANT
        self.is_affine = self.code == AFFINE
        self.is_bpr = self.code == BPR
        self.is_cap = self.code == CAPACITY_LIMITED

    def __len__(self):
        return len(self.params)

    def _bpr_ratio(self, f, idx):
        return (f[idx] / self.cap[idx]) ** self.beta[idx]

    def tau(self, f):
        """Cost at flow ``f``; ``inf`` where a hard capacity is exceeded."""
        f = np.asarray(f, dtype=float)
        out = self.t0.copy()
        m = self.is_affine
        out[m] += self.slope[m] * f[m]
        m = self.is_bpr
        out[m] *= 1.0 + self.alpha[m] * self._bpr_ratio(f, m)
        m = self.is_cap & (f > self.cap)
        out[m] = np.inf
        return out

    def dtau(self, f):
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(self.t0)
        out[self.is_affine] = self.slope[self.is_affine]
        m = self.is_bpr
        b = self.beta[m]
        out[m] = (self.t0[m] * self.alpha[m] * b / self.cap[m]
                  * (f[m] / self.cap[m]) ** (b - 1.0))
        return out

    def sigma(self, f):
        f = np.asarray(f, dtype=float)
        out = self.t0 * f
        m = self.is_affine
        out[m] += 0.5 * self.slope[m] * f[m] ** 2
        m = self.is_bpr
        b = self.beta[m]
        out[m] += (self.t0[m] * self.alpha[m] * self.cap[m] / (b + 1.0)
                   * (f[m] / self.cap[m]) ** (b + 1.0))
        m = self.is_cap & (f > self.cap)
        out[m] = np.inf
        return out

    def inverse(self, t):
        """Flow ``f >= 0`` with ``tau(f) = t`` on invertible families.

        Non-invertible families get ``nan``; callers treat them via ``prox``.
        """
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(self.t0)
        excess = np.maximum(t - self.t0, 0.0)
        m = self.is_affine
        out[m] = excess[m] / self.slope[m]
        m = self.is_bpr
        out[m] = self.cap[m] * (excess[m] / (self.t0[m] * self.alpha[m])) ** (1.0 / self.beta[m])
        out[self.is_const | self.is_cap] = np.nan
        return out

    def sigma_star(self, t):
        """Conjugate value; ``inf`` outside its domain."""
        t = np.asarray(t, dtype=float)
        excess = np.maximum(t - self.t0, 0.0)
        out = np.zeros_like(self.t0)
        m = self.is_affine
        out[m] = 0.5 * excess[m] ** 2 / self.slope[m]
        m = self.is_bpr
        b = self.beta[m]
        f = self.cap[m] * (excess[m] / (self.t0[m] * self.alpha[m])) ** (1.0 / b)
        out[m] = f * excess[m] * b / (b + 1.0)
        m = self.is_cap
        out[m] = self.cap[m] * (t[m] - self.t0[m])
        out[m & (t < self.t0)] = np.inf
        out[self.is_const & (t > self.t0)] = np.inf
        return out

    def in_domain(self, t):
        t = np.asarray(t, dtype=float)
        ok = np.isfinite(t)
        ok &= ~(self.is_cap & (t < self.t0))
        ok &= ~(self.is_const & (t > self.t0))
        return ok

    def prox(self, v, step):
        """``argmin_t step*sigma_star(t) + (t - v)**2 / 2`` per link."""
        v = np.asarray(v, dtype=float)
        step = np.broadcast_to(np.asarray(step, dtype=float), v.shape)
        out = v.copy()
        m = self.is_const
        out[m] = np.minimum(v[m], self.t0[m])
        m = self.is_cap
        out[m] = np.maximum(self.t0[m], v[m] - step[m] * self.cap[m])
        m = self.is_affine & (v > self.t0)
        a = self.slope[m]
        out[m] = (a * v[m] + step[m] * self.t0[m]) / (a + step[m])
        m = np.flatnonzero(self.is_bpr & (v > self.t0))
        if m.size:
            f = _bpr_prox_flow(self.t0[m], self.cap[m], self.alpha[m], self.beta[m],
                               v[m], step[m])
            # tau(f) equals v - step*f at the root without the cancellation
            r = (f / self.cap[m]) ** self.beta[m]
            out[m] = self.t0[m] * (1.0 + self.alpha[m] * r)
        return out


def _bpr_prox_flow(t0, cap, alpha, beta, v, s, tol=1e-12, max_iter=500):
    """Root ``f > 0`` of ``tau(f) + s*f - v`` by safeguarded Newton.

    The residual is increasing and convex in ``f``, negative at 0 and
    nonnegative at ``(v - t0)/s``.
    """
    lo = np.zeros_like(v)
    hi = (v - t0) / s
    x = hi.copy()
    dx_old = hi - lo
    scale = 1.0 + np.abs(v)
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            r = t0 * (1.0 + alpha * (x / cap) ** beta) + s * x - v
            dr = t0 * alpha * beta * (x / cap) ** (beta - 1.0) / cap + s
        done = np.abs(r) <= tol * scale
        if done.all():
            break
        pos = r > 0
        hi = np.where(pos, x, hi)
        lo = np.where(pos, lo, x)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            step = r / dr
        newton = x - step
        # bisect when Newton leaves the bracket or does not halve the last step
        bisect = (~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
                  | (np.abs(step) > 0.5 * np.abs(dx_old)))
        nxt = np.where(bisect, 0.5 * (lo + hi), newton)
        dx_old = np.where(done, dx_old, np.abs(nxt - x))
        x = np.where(done, x, nxt)
    return x


# -- scalar API --------------------------------------------------------------

def _one(p: CostParams) -> CostArrays:
    return CostArrays([p])


def tau(p: CostParams, f: float) -> float:
    if f < 0:
        raise ValueError("flow must be >= 0")
    if p.code == CAPACITY_LIMITED and f > p.capacity:
        raise CapacityExceeded(f"flow {f} exceeds capacity {p.capacity}")
    return float(_one(p).tau(np.array([f]))[0])


def dtau(p: CostParams, f: float) -> float:
    return float(_one(p).dtau(np.array([f]))[0])


def sigma(p: CostParams, f: float) -> float:
    """Potential; ``inf`` beyond a hard capacity."""
    if f < 0:
        raise ValueError("flow must be >= 0")
    return float(_one(p).sigma(np.array([f]))[0])


def sigma_star(p: CostParams, t: float) -> float:
    arr = _one(p)
    if not arr.in_domain(np.array([t]))[0]:
        raise OutOfDomain(f"t={t} outside the conjugate domain of {p.family}")
    return float(arr.sigma_star(np.array([t]))[0])


def inverse_tau(p: CostParams, t: float):
    """Flow at which the cost equals ``t``.

    Returns 0 below free flow.  Constant and capacity-limited costs are not
    invertible at ``t >= free_flow``; an :class:`Interval` (the subdifferential
    of ``sigma_star``) is returned instead.
    """
    code = p.code
    if code == CONSTANT:
        if t < p.free_flow:
            return 0.0
        if t == p.free_flow:
            return Interval(0.0, math.inf)
        raise OutOfDomain(f"t={t} above constant cost {p.free_flow}")
    if code == CAPACITY_LIMITED:
        if t < p.free_flow:
            raise OutOfDomain(f"t={t} below free flow {p.free_flow}")
        if t == p.free_flow:
            return Interval(0.0, p.capacity)
        return Interval(p.capacity, p.capacity)
    return float(_one(p).inverse(np.array([t]))[0])


def prox_composite(p: CostParams, v: float, step: float) -> float:
    if not step > 0:
        raise ValueError("step must be > 0")
    return float(_one(p).prox(np.array([v]), step)[0])
