"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 solver did not reach its tolerance
(the partial certificate is still written).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dualsolve, dynamics, oracle, softpath
from .hiernet import (NetworkFormatError, dump_network, flatten, load_network,
                      network_to_dict, validate)

log = logging.getLogger("hiersue")

OUT_ENV = "HIERSUE_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    network: Path
    out_dir: Path
    overrides: dict = field(default_factory=dict)
    seed: int = 0
    verbosity: int = 0

    def __post_init__(self):
        if not self.network.exists():
            raise ConfigError(f"no such file: {self.network}")


def apply_overrides(cfg, overrides: dict):
    """Replace dataclass fields of ``cfg``, checking names and coercing types."""
    known = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    updates = {}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {type(cfg).__name__}")
        default = known[key]
        try:
            if isinstance(default, bool):
                value = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                value = int(value)
            elif isinstance(default, float) or default is None:
                value = None if value is None else float(value)
            elif isinstance(default, tuple):
                value = tuple(float(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
        updates[key] = value
    return dataclasses.replace(cfg, **updates)


def fmt(x) -> str:
    return f"{float(x):.12g}"


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_solution(sol: dualsolve.EquilibriumSolution, out_dir) -> list:
    out_dir = Path(out_dir)
    net = sol.net
    comp = net.compiled
    charges = dualsolve.tolls(sol)
    level = dict(zip(comp.links, comp.link_level.tolist()))
    rows = [(l, level[l], fmt(f), fmt(charges[l])) for l, f in zip(comp.links, sol.link_flows)]
    _write_csv(out_dir / "flows.csv", ("edge", "level", "flow", "toll"), rows)
    rows = []
    for k, (lvl, D) in enumerate(zip(net.levels, sol.demands), start=1):
        for (o, d), v in zip(lvl.od_pairs, D):
            rows.append((k, f"{o}->{d}", fmt(v)))
    _write_csv(out_dir / "demands.csv", ("level", "od", "demand"), rows)
    c = sol.certificate
    _write_csv(out_dir / "certificate.csv", ("dual", "primal", "gap", "iters"),
               [(fmt(c.dual_value), fmt(c.primal_value), fmt(c.gap), c.iterations)])
    _write_csv(out_dir / "convergence.csv", ("iter", "dual", "primal", "gap", "elapsed"),
               [(i, fmt(d), fmt(p), fmt(g), fmt(e)) for i, d, p, g, e in sol.history])
    return [out_dir / n for n in ("flows.csv", "demands.csv", "certificate.csv", "convergence.csv")]


def describe_path(p: oracle.NestedPath) -> str:
    parts = []
    for pos, eid in enumerate(p.edges):
        parts.append(f"{eid}[{describe_path(p.children[pos])}]" if pos in p.children else str(eid))
    return " ".join(parts)


# -- subcommands -------------------------------------------------------------

def cmd_validate(args, net) -> int:
    report = validate(net)
    if not report.ok:
        for v in report.violations:
            print(v, file=sys.stderr)
        return 1
    print(f"ok: {net.m} level(s), {net.compiled.n_links} link(s)")
    return 0


def cmd_solve(args, net, run: RunConfig) -> int:
    cfg = dualsolve.SolverConfig(eps=args.eps, max_iters=args.max_iters,
                                 gamma_min=args.gamma_min, checkpoint_every=args.checkpoint)
    cfg = apply_overrides(cfg, run.overrides)
    try:
        sol = dualsolve.solve(net, cfg)
        code = 0
    except dualsolve.Nonconvergence as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        sol, code = exc.solution, 2
    emit_solution(sol, run.out_dir)
    c = sol.certificate
    log.info("gap %.3e after %d iterations", c.gap, c.iterations)
    return code


def cmd_simulate(args, net, run: RunConfig) -> int:
    cfg = dynamics.DynamicsConfig(lambdas=tuple(args.lambdas), horizon=args.horizon,
                                  ode_step=args.step, agents_per_unit=args.agents,
                                  steps_per_unit=args.steps_per_unit, seed=run.seed,
                                  record_every=args.record_every)
    cfg = apply_overrides(cfg, run.overrides)
    if args.mode == "ode":
        traj = dynamics.ode_integrate(net, cfg)
    else:
        traj = dynamics.simulate_agents(net, cfg)
    links = net.compiled.links
    header = ["time"] + list(links)
    equal = len(set(net.gamma)) == 1
    if traj.lyapunov is not None and equal:
        header.append("psi")
    rows = []
    for i, (t, f) in enumerate(zip(traj.times, traj.link_flows)):
        row = [fmt(t)] + [fmt(v) for v in f]
        if len(header) > len(links) + 1:
            row.append(fmt(traj.lyapunov[i]))
        rows.append(row)
    _write_csv(run.out_dir / "trajectory.csv", header, rows)
    return 0


def cmd_oracle(args, net, run: RunConfig) -> int:
    pm = oracle.PathModel(net, cap=args.max_paths)
    if pm.costs.is_cap.any():
        x, _ = oracle.constrained_equilibrium(net, model=pm)
    else:
        x = oracle.brute_force_equilibrium(net, tol=args.tol, model=pm)
    t = pm.costs.tau(x.link_flows)
    rows = []
    for w, (paths, xs, g) in enumerate(zip(pm.paths, x.x, pm.path_costs(t))):
        o, d = net.levels[0].od_pairs[w]
        for p, v, c in zip(paths, xs, g):
            rows.append((f"{o}->{d}", describe_path(p), fmt(v), fmt(c)))
    _write_csv(run.out_dir / "paths.csv", ("od", "path", "flow", "cost"), rows)
    return 0


def cmd_flatten(args, net, run: RunConfig) -> int:
    flat = flatten(net)
    if args.output:
        dump_network(flat, args.output)
    else:
        json.dump(network_to_dict(flat), sys.stdout, indent=1)
        sys.stdout.write("\n")
    return 0


def cmd_softpath(args, net, run: RunConfig) -> int:
    if args.tolls:
        with open(args.tolls) as fh:
            t = softpath.toll_array(net, json.load(fh))
    else:
        t = net.compiled.free_flow
    table = softpath.soft_values(net, t)
    flows = softpath.soft_flows(net, t)
    rows = []
    for k, (lvl, S, D) in enumerate(zip(net.levels, table.soft_cost, flows.demands), start=1):
        for (o, d), s, dem in zip(lvl.od_pairs, S, D):
            rows.append((k, f"{o}->{d}", fmt(s), fmt(dem)))
    _write_csv(run.out_dir / "soft_values.csv", ("level", "od", "soft_cost", "demand"), rows)
    _write_csv(run.out_dir / "soft_flows.csv", ("edge", "flow"),
               [(l, fmt(f)) for l, f in zip(net.compiled.links, flows.link_flows)])
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("network", type=Path, help="network file (JSON)")
    common.add_argument("--out", type=Path, default=None,
                        help=f"output directory (default ${OUT_ENV} or the current directory)")
    common.add_argument("--config", type=Path, default=None,
                        help="JSON file of config field overrides")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="hiersue", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a network file")

    s = sub.add_parser("solve", parents=[common], help="solve for the equilibrium")
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--max-iters", type=int, default=20_000)
    s.add_argument("--gamma-min", type=float, default=1e-3)
    s.add_argument("--checkpoint", type=int, default=1, help="log the gap every N iterations")

    s = sub.add_parser("simulate", parents=[common], help="run the population dynamics")
    s.add_argument("--mode", choices=("ode", "agents"), default="ode")
    s.add_argument("--lambdas", type=float, nargs="+", default=[1.0])
    s.add_argument("--horizon", type=float, default=50.0)
    s.add_argument("--step", type=float, default=0.05)
    s.add_argument("--agents", type=int, default=1000, help="agents per unit demand")
    s.add_argument("--steps-per-unit", type=int, default=10)
    s.add_argument("--record-every", type=int, default=1)

    s = sub.add_parser("oracle", parents=[common], help="brute-force equilibrium by enumeration")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-paths", type=int, default=10_000)

    s = sub.add_parser("flatten", parents=[common], help="collapse an equal-temperature hierarchy")
    s.add_argument("-o", "--output", type=Path, default=None)

    s = sub.add_parser("softpath", help="soft path computations")
    ssub = s.add_subparsers(dest="action", required=True)
    e = ssub.add_parser("eval", parents=[common], help="soft costs and flows at given tolls")
    e.add_argument("--tolls", type=Path, default=None, help="JSON map link -> toll (default free flow)")
    return p


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "flatten": cmd_flatten,
    "softpath": cmd_softpath,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    out = args.out or Path(os.environ.get(OUT_ENV, "."))
    try:
        overrides = {}
        if args.config:
            with open(args.config) as fh:
                overrides = json.load(fh)
            if not isinstance(overrides, dict):
                raise ConfigError("config file must hold a JSON object")
        run = RunConfig(args.command, args.network, out, overrides, args.seed, args.verbose)
        net = load_network(args.network)
        if args.command == "validate":
            return cmd_validate(args, net)
        report = validate(net)
        if not report.ok:
            for v in report.violations:
                print(v, file=sys.stderr)
            return 1
        return COMMANDS[args.command](args, net, run)
    except (NetworkFormatError, ConfigError, json.JSONDecodeError, FileNotFoundError,
            KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
