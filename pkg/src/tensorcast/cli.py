"""``tensorcast`` command line.

Subcommands: equivalence, run, traffic, cast, simulate, gen-workload.
Exit status is 0 only when every check of the invoked command passes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness

COMMANDS = {
    "equivalence": harness.cmd_equivalence,
    "run": harness.cmd_run,
    "traffic": harness.cmd_traffic,
    "simulate": harness.cmd_simulate,
    "gen-workload": harness.cmd_gen_workload,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorcast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if name == "equivalence":
            p.add_argument("--instances", type=int)
    p = sub.add_parser("cast", help="cast a src,dst index CSV")
    p.add_argument("input")
    p.add_argument("--out", default=".")
    return parser


def _load(args) -> harness.ExperimentConfig:
    if args.config:
        cfg = harness.ExperimentConfig.load(args.config)
    else:
        cfg = harness.ExperimentConfig.from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = type(cfg.out)(args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "cast":
            report = harness.cmd_cast(args.input, args.out)
        else:
            cfg = _load(args)
            kw = {}
            if args.command == "equivalence" and args.instances is not None:
                kw["instances"] = args.instances
            report = COMMANDS[args.command](cfg, **kw)
    except (OSError, ValueError, KeyError) as exc:
        print(f"tensorcast {args.command}: error: {exc}", file=sys.stderr)
        return 2
    shown = {k: v for k, v in report.items() if k not in ("timelines", "csv")}
    print(json.dumps(shown, indent=2, default=str))
    if not report.get("passed", False):
        if report.get("failing_seed") is not None:
            print(f"FAILED at seed {report['failing_seed']}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
