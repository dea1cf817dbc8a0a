"""Command-line entry point: ``lteloc run|batch|validate|list-scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .runner import RunError, run_batch, run_scenario
from .scenario import ScenarioError, list_scenarios, load_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUN_ERROR = 2


def _load(ref: str):
    try:
        return load_scenario(ref)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"invalid: {d}", file=sys.stderr)
    except (FileNotFoundError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
    return None


def cmd_run(args) -> int:
    scn = _load(args.scenario)
    if scn is None:
        return EXIT_INVALID
    boost = False if args.no_boost else None
    sched = False if args.no_sched_manip else None
    try:
        res = run_scenario(scn, args.seed, power_boost=boost, sched_manip=sched)
    except (RunError, ValueError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    if args.out:
        res.write(args.out)
    print(res.summary)
    return EXIT_OK


def cmd_batch(args) -> int:
    scn = _load(args.scenario)
    if scn is None:
        return EXIT_INVALID
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        b = run_batch(scn, seeds, axis=args.axis, workers=args.workers)
    except (RunError, ValueError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{scn.name}_batch.csv").write_text(b.csv())
        for r in b.results:
            r.write(out)
    for label, agg in b.aggregates.items():
        print(f"{scn.name} {label} n={agg['n']} success_rate={agg['success_rate']:.3f} "
              f"p{agg['q']:g}_dist_err_m={agg['dist_err_m']:.3f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    rc = EXIT_OK
    for ref in args.scenarios:
        scn = _load(ref)
        if scn is None:
            rc = EXIT_INVALID
        else:
            print(f"ok: {ref} ({scn.name}, kind={scn.kind})")
    return rc


def cmd_list(args) -> int:
    for name, desc in list_scenarios():
        print(f"{name:28s} {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lteloc", description="LTE uplink localization attack simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario", help="bundled scenario name or path to a .scn file")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--no-boost", action="store_true", help="disable power boosting")
    r.add_argument("--no-sched-manip", action="store_true", help="disable scheduling manipulation")
    r.add_argument("--out", help="directory for CSV outputs")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run a scenario over several seeds")
    b.add_argument("scenario")
    b.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seeds")
    b.add_argument("--axis", choices=("boost", "sched_manip"), default=None, help="toggle swept on/off")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_batch)

    v = sub.add_parser("validate", help="check scenario files against the schema")
    v.add_argument("scenarios", nargs="+")
    v.set_defaults(func=cmd_validate)

    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
