"""Command-line entry point: ``mrtmp plan|montecarlo|scale``."""
from __future__ import annotations

import argparse
import logging
import sys

from .pddl import PDDLParseError, PDDLSemanticError
from .scenario import read_scenario
from .sim import (AggregateFailure, monte_carlo, run_session, scaling_study, write_aggregate_outputs,
                  write_scale_outputs, write_session_outputs)
from .world import ScenarioError

EXIT_OK, EXIT_NO_PLAN, EXIT_INVALID = 0, 2, 3

log = logging.getLogger("mrtmp")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrtmp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pl = sub.add_parser("plan", help="plan and replay one session")
    pl.add_argument("--scenario", required=True)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--no-mutual", action="store_true")
    pl.add_argument("--out", required=True)

    mc = sub.add_parser("montecarlo", help="aggregate errors over many seeded sessions")
    mc.add_argument("--scenario", required=True)
    mc.add_argument("--sessions", type=int, default=25)
    mc.add_argument("--no-mutual", action="store_true")
    mc.add_argument("--base-seed", type=int, default=0)
    mc.add_argument("--out", required=True)

    sc = sub.add_parser("scale", help="planning time versus rooms or robots")
    sc.add_argument("--mode", choices=("rooms", "robots"), required=True)
    sc.add_argument("--scenario", required=True)
    sc.add_argument("--sessions", type=int, default=5)
    sc.add_argument("--sizes", type=int, nargs="+", default=None)
    sc.add_argument("--base-seed", type=int, default=0)
    sc.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = read_scenario(args.scenario)
        if args.command == "plan":
            rep = run_session(scenario, args.seed, not args.no_mutual)
            write_session_outputs(rep, args.out)
            if not rep.success:
                print(f"no plan: {rep.message}", file=sys.stderr)
                return EXIT_NO_PLAN
            print(f"plan cost {rep.total_cost:.4f}, {len(rep.plan)} actions, "
                  f"{rep.planning_time:.2f}s; wrote {args.out}")
        elif args.command == "montecarlo":
            agg = monte_carlo(scenario, args.sessions, not args.no_mutual, args.base_seed)
            write_aggregate_outputs(agg, args.out)
            worst = ", ".join(f"{r}={agg.worst_case_error(r):.3f}" for r in agg.mean_errors)
            print(f"{agg.sessions - agg.failed}/{agg.sessions} sessions solved; worst mean error {worst}")
        else:
            sizes = args.sizes or ([2, 4, 6, 8, 10] if args.mode == "rooms" else [2, 4, 6])
            rows = scaling_study(scenario, args.mode, sizes, args.sessions, args.base_seed)
            write_scale_outputs(rows, args.mode, args.out)
            for r in rows:
                print(f"{args.mode}={r['size']}: {r['mean_planning_time']:.3f}s "
                      f"({r['solved']}/{r['sessions']} solved)")
    except AggregateFailure as exc:
        print(f"no plan: {exc}", file=sys.stderr)
        return EXIT_NO_PLAN
    except (ScenarioError, PDDLParseError, PDDLSemanticError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
