"""Time the forward (soft values) and backward (flows) passes separately on
layered grids of growing size and hop limit."""
import argparse
import time

import numpy as np

from hiersue.costlib import CostParams
from hiersue.hiernet import Edge, HierNetwork, LevelGraph
from hiersue.softpath import backward_pass, forward_pass


def grid(width, depth, hop, rng):
    """``depth`` columns of ``width`` nodes, fully connected between columns."""
    nodes = ["s", "t"] + [f"n{c}_{r}" for c in range(depth) for r in range(width)]
    edges = []

    def add(u, v):
        params = CostParams.affine(rng.uniform(0.5, 2.0), rng.uniform(0.1, 1.0))
        edges.append(Edge(f"e{len(edges)}", u, v, cost=params))

    for r in range(width):
        add("s", f"n0_{r}")
        add(f"n{depth - 1}_{r}", "t")
    for c in range(depth - 1):
        for r in range(width):
            for q in range(width):
                add(f"n{c}_{r}", f"n{c + 1}_{q}")
    lvl = LevelGraph(nodes, edges, [("s", "t")], hop)
    return HierNetwork([lvl], [0.5], [1.0])


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--widths", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'width':>5s} {'edges':>6s} {'hops':>4s} {'forward':>10s} {'backward':>10s}")
    for width in args.widths:
        for hop in (args.depth + 1, 2 * (args.depth + 1)):
            net = grid(width, args.depth, hop, rng)
            t = net.compiled.free_flow
            cache = forward_pass(net, t)[1]
            fwd = best_of(lambda: forward_pass(net, t), args.repeat)
            bwd = best_of(lambda: backward_pass(net, cache), args.repeat)
            print(f"{width:5d} {net.compiled.n_links:6d} {hop:4d} {fwd * 1e3:8.2f}ms {bwd * 1e3:8.2f}ms")


if __name__ == "__main__":
    main()
