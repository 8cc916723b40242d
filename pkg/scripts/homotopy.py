"""Two limits of the model.

Temperature: Pigou flows approach the Nash split as gamma shrinks, and the
soft value stays within gamma*log(#paths) of the hard shortest path cost.
Capacity: BPR links with beta = 1/mu approach a hard capacity as mu -> 0.
"""
import argparse

import numpy as np

from hiersue import dualsolve, fixtures, oracle, softpath
from hiersue.costlib import CostParams


def gamma_sweep(gammas, eps):
    print("gamma      f_const    f_affine   hard-soft  gamma*ln2")
    for g in gammas:
        net = fixtures.pigou(g, 1.0)
        sol = dualsolve.solve(net, dualsolve.SolverConfig(eps=eps))
        hard = min(oracle.PathModel(net).path_costs(sol.t_star)[0])
        soft = softpath.soft_values(net, sol.t_star).psi(1, 0)
        f = sol.link_flows
        print(f"{g:<10.4g} {f[0]:<10.6f} {f[1]:<10.6f} {hard - soft:<10.3e} {g * np.log(2):.3e}")


def capacity_sweep(mus, eps):
    hard = dualsolve.solve(fixtures.capacity(), dualsolve.SolverConfig(eps=eps))
    print(f"capacity-limited flows {hard.link_flows}, tolls {dualsolve.tolls(hard)}")
    print("mu         f_fast     distance")
    for mu in mus:
        net = fixtures.capacity(fast=CostParams.bpr(1.0, 1.0, 1.0, 1.0 / mu))
        sol = dualsolve.solve(net, dualsolve.SolverConfig(eps=eps))
        dist = np.abs(sol.link_flows - hard.link_flows).max()
        print(f"{mu:<10.4g} {sol.link_flows[0]:<10.6f} {dist:.3e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--gammas", type=float, nargs="+", default=[2.0, 0.5, 0.1, 0.02, 0.005])
    ap.add_argument("--mus", type=float, nargs="+", default=[0.3, 0.1, 0.03, 0.01, 0.003])
    ap.add_argument("--eps", type=float, default=1e-9)
    args = ap.parse_args()
    gamma_sweep(args.gammas, args.eps)
    print()
    capacity_sweep(args.mus, args.eps)


if __name__ == "__main__":
    main()
