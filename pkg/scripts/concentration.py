"""Stationary variance of the agent chain against population size."""
import argparse
import time

import numpy as np

from hiersue import dynamics, fixtures


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--net", default="pigou", choices=sorted(fixtures.FIXTURES))
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 10_000])
    ap.add_argument("--horizon", type=float, default=500.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    net = fixtures.FIXTURES[args.net]()
    model = dynamics._ChainModel(net)
    ode = dynamics.ode_integrate(net, dynamics.DynamicsConfig(lambdas=(1.0,) * net.m, horizon=200.0))
    var = []
    print(f"{'M':>8s} {'variance':>12s} {'|mean - ode|':>14s} {'time':>7s}")
    for M in args.sizes:
        cfg = dynamics.DynamicsConfig(lambdas=(1.0,) * net.m, horizon=args.horizon,
                                      agents_per_unit=M, seed=args.seed)
        start = time.perf_counter()
        flows = dynamics.simulate_agents(net, cfg, model=model).link_flows
        tail = flows[len(flows) // 10:]
        var.append(tail.var(axis=0).sum())
        bias = np.abs(tail.mean(axis=0) - ode.final.link_flows).max()
        print(f"{M:8d} {var[-1]:12.4e} {bias:14.3e} {time.perf_counter() - start:6.2f}s")
    slope = np.polyfit(np.log(args.sizes), np.log(var), 1)[0]
    print(f"log-log slope {slope:.3f}")


if __name__ == "__main__":
    main()
