"""Solve every reference network and compare against the enumeration oracle."""
import argparse
import time

import numpy as np

from hiersue import dualsolve, fixtures, oracle


def reference(net):
    pm = oracle.PathModel(net)
    if pm.costs.is_cap.any():
        return oracle.constrained_equilibrium(net, model=pm)[0].link_flows
    return oracle.brute_force_equilibrium(net, tol=1e-12, model=pm).link_flows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=1e-6)
    ap.add_argument("--only", nargs="*", default=None, help="fixture names")
    args = ap.parse_args()
    names = args.only or list(fixtures.FIXTURES)
    print(f"{'net':18s} {'iters':>6s} {'gap':>10s} {'time':>7s} {'|f - f_oracle|':>15s}")
    for name in names:
        net = fixtures.FIXTURES[name]()
        start = time.perf_counter()
        sol = dualsolve.solve(net, dualsolve.SolverConfig(eps=args.eps))
        elapsed = time.perf_counter() - start
        err = np.abs(sol.link_flows - reference(net)).max()
        c = sol.certificate
        print(f"{name:18s} {c.iterations:6d} {c.gap:10.2e} {elapsed:6.2f}s {err:15.2e}")


if __name__ == "__main__":
    main()
