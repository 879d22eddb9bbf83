"""Command line entry point ``dhnet``.

Exit codes: 0 success, 2 operational-bound violations present, 1 solver or
input failure.  ``DHNET_LOG`` sets the log level (e.g. ``DEBUG``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import generic
from .casestudy import check_bounds_feasible, optimize_peak, run_case_study
from .hydraulics import HydraulicsError
from .integrator import SimulationError, TimeGrid, simulate, write_trajectory_csv
from .materials import energy_of_temperature
from .network import (
    GENERATORS,
    NetworkError,
    cycle_basis,
    load_network,
    random_solenoidal_flow,
)
from .ph import build_ph, structure_report
from .scenario import Scenario, ScenarioError, TimeTable, load_scenario, read_csv_table
from .thermal import assemble_system, build_mesh

log = logging.getLogger("dhnet")

EXIT_OK, EXIT_FAIL, EXIT_VIOLATIONS = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # keep exit code 2 reserved for bound violations
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAIL, f"{self.prog}: error: {message}\n")


def _table(rows, header):
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join(fmt.format(*map(str, r)) for r in [header, *rows])


def cmd_simulate(args):
    net = load_network(args.network)
    scenario, _ = load_scenario(args.scenario, net)
    mesh = build_mesh(net, args.mesh_dx)
    grid = TimeGrid(args.t0, args.t_end, args.dt)
    rec = simulate(net, mesh, scenario, grid, fixed_point_sweeps=args.sweeps, cooling=args.cooling, keep_states=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(rec, out / "trajectory.csv", net.material)
    P = np.asarray(rec.P_in)
    summary = {
        "steps": grid.n_steps,
        "cells": mesh.kappa,
        "P_in_max": float(P.max()),
        "P_in_mean": float(P.mean()),
        "violations": rec.n_violations,
        "flow_reversals": len(rec.reversals),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_VIOLATIONS if rec.n_violations else EXIT_OK


def cmd_check_ph(args):
    net = load_network(args.network)
    mesh = build_mesh(net, args.mesh_dx)
    rng = np.random.default_rng(args.seed)
    Z = cycle_basis(net)
    names, passed, worst = None, None, {}
    for _ in range(args.samples):
        q = random_solenoidal_flow(net, rng, basis=Z)
        sys_ = assemble_system(net, mesh, q)
        ph = build_ph(sys_, mesh, net, verify=False)
        checks = structure_report(sys_, ph, net, mesh).checks()
        if names is None:
            names = list(checks)
            passed = {k: 0 for k in names}
        for k, ok in checks.items():
            passed[k] += bool(ok)
    rows = [(k, f"{passed[k]}/{args.samples}", "PASS" if passed[k] == args.samples else "FAIL") for k in names]
    print(_table(rows, ("invariant", "samples", "result")))
    return EXIT_OK if all(passed[k] == args.samples for k in names) else EXIT_FAIL


def cmd_check_generic(args):
    rows = generic.refinement_ladder(args.refinements, args.cells, scheme=args.scheme)
    jr = generic.observed_rates([r.J_dS for r in rows])
    er = generic.observed_rates([r.entropy for r in rows])
    table = []
    for i, r in enumerate(rows):
        table.append((
            r.m, f"{r.skew:.1e}", f"{r.symmetric:.1e}", f"{r.min_eig_R:.1e}", f"{r.R_dH:.1e}",
            f"{r.J_dS:.3e}", "" if i == 0 else f"{jr[i - 1]:.2f}",
            f"{r.entropy:.3e}", "" if i == 0 else f"{er[i - 1]:.2f}",
        ))
    print(_table(table, ("m", "skew J", "sym R", "min eig R", "R dH", "|J dS|", "rate", "entropy", "rate")))
    ok = all(r.skew <= 1e-12 and r.symmetric <= 1e-12 and r.R_dH <= 1e-12 for r in rows)
    return EXIT_OK if ok else EXIT_FAIL


def _demand_table(path, net):
    ids = [net.arcs[a].id for a in net.consumer_arcs]
    import csv

    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if all(i in header for i in ids):
        return read_csv_table(path, ids)
    col = "P" if "P" in header else header[1]
    tab = read_csv_table(path, [col])
    n = net.n_consumers
    return tab.map(lambda v: np.repeat(v[:, None] / n, n, 1))


def cmd_optimize_peak(args):
    net = load_network(args.network)
    demand = _demand_table(args.demand, net)
    t_end = args.t_end if args.t_end is not None else float(demand.times[-1])
    grid = TimeGrid(float(demand.times[0]), t_end, args.dt)
    mesh = build_mesh(net, args.mesh_dx)
    sc = Scenario(TimeTable.constant(energy_of_temperature(args.T_const)), demand, T_bf=args.T_bf)
    bounds = (energy_of_temperature(args.T_min), energy_of_temperature(args.T_max))
    check_bounds_feasible(net, mesh, sc, grid, bounds)
    res = optimize_peak(net, mesh, sc, grid, bounds, budget=args.budget)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "injection_profile.csv", "w") as fh:
        fh.write("t,u_e,T_in\n")
        from .materials import temperature_of_energy

        for t, u in zip(res.profile.times, res.profile.values):
            fh.write(f"{t:.6g},{u:.10e},{temperature_of_energy(u):.6f}\n")
    rep = run_case_study(net, mesh, sc, sc.with_injection(res.profile), grid, out, threshold=res.cap)
    lines = rep.lines() + [f"candidate simulations  : {res.evaluations}"]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_gen_network(args):
    gen = GENERATORS[args.kind]
    net = gen(consumers=args.consumers, seed=args.seed)
    text = json.dumps(net.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(json.dumps(net.summary()))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="dhnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario and write the trajectory CSV")
    s.add_argument("--network", required=True)
    s.add_argument("--scenario", required=True)
    s.add_argument("--dt", type=float, required=True, metavar="SECONDS")
    s.add_argument("--t-end", type=float, required=True, metavar="SECONDS")
    s.add_argument("--t0", type=float, default=0.0, metavar="SECONDS")
    s.add_argument("--mesh-dx", type=float, required=True, metavar="METERS")
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--sweeps", type=int, default=1, help="hydraulic/thermal fixed-point sweeps per step (1-3)")
    s.add_argument("--cooling", action="store_true", help="include wall heat losses")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check-ph", help="verify the port-Hamiltonian structure on random flows")
    c.add_argument("--network", required=True)
    c.add_argument("--samples", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--mesh-dx", type=float, default=10.0, metavar="METERS")
    c.set_defaults(func=cmd_check_ph)

    g = sub.add_parser("check-generic", help="GENERIC operator checks over a refinement ladder")
    g.add_argument("--cells", type=int, default=16)
    g.add_argument("--refinements", type=int, default=4)
    g.add_argument("--scheme", choices=generic.SCHEMES, default="forward")
    g.set_defaults(func=cmd_check_generic)

    o = sub.add_parser("optimize-peak", help="search an injection profile with a low feed-in peak")
    o.add_argument("--network", required=True)
    o.add_argument("--demand", required=True, help="CSV with column t and per-consumer or total power [W]")
    o.add_argument("--budget", type=int, default=12)
    o.add_argument("--out", required=True, metavar="DIR")
    o.add_argument("--dt", type=float, default=300.0)
    o.add_argument("--t-end", type=float, default=None)
    o.add_argument("--mesh-dx", type=float, default=20.0)
    o.add_argument("--T-const", type=float, default=90.0, help="baseline injection temperature [degC]")
    o.add_argument("--T-min", type=float, default=70.0)
    o.add_argument("--T-max", type=float, default=120.0)
    o.add_argument("--T-bf", type=float, default=60.0)
    o.set_defaults(func=cmd_optimize_peak)

    n = sub.add_parser("gen-network", help="write a synthetic network as JSON")
    n.add_argument("--kind", choices=sorted(GENERATORS), required=True)
    n.add_argument("--consumers", type=int, default=3)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out", default=None)
    n.set_defaults(func=cmd_gen_network)
    return p


def main(argv=None):
    level = os.environ.get("DHNET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SimulationError, HydraulicsError, ArithmeticError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_FAIL
    except (NetworkError, ScenarioError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
