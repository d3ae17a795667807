"""Command-line entry point.

Subcommands: run, gains, learn, sweep. Exit codes: 0 success, 2
configuration error, 3 numerical failure. Set MASIM_LOG=DEBUG (or any
standard level name) for diagnostics.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import sim_harness
from .sim_harness import EXIT_CONFIG

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masim",
        description="Resilient leader-follower synchronization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--scenario", required=True,
                       help="scenario file path or packaged scenario name")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted-path scenario override, TOML literal value")

    common(sub.add_parser("run", help="simulate and write traces"))
    common(sub.add_parser("gains", help="print the design report"),
           out_required=False)
    common(sub.add_parser("learn", help="learn gains from collected data"))
    p_sweep = sub.add_parser("sweep", help="run once per parameter value")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         help="one of gamma, alpha, delta, theta, beta, kappa, "
                              "dt, attack_amplitude")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated numeric values")
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("MASIM_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    overrides = tuple(args.overrides)
    if args.command == "run":
        return sim_harness.run(args.scenario, args.out, overrides=overrides,
                               seed=args.seed)
    if args.command == "gains":
        return sim_harness.gains(args.scenario, out_dir=args.out,
                                 overrides=overrides, seed=args.seed)
    if args.command == "learn":
        return sim_harness.learn(args.scenario, args.out, overrides=overrides,
                                 seed=args.seed)
    if args.command == "sweep":
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            print(f"configuration error: bad --values: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not values:
            print("configuration error: --values is empty", file=sys.stderr)
            return EXIT_CONFIG
        return sim_harness.sweep(args.scenario, args.param, values, args.out,
                                 overrides=overrides, seed=args.seed)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
