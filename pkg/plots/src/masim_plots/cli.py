"""Command-line entry point: render plot specs against trace CSVs."""
from __future__ import annotations

import argparse
import sys

from .plotspec import PlotSpecError, load_spec, packaged_specs
from .render import render

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render simulator trace CSVs to SVG panels")
    sub = parser.add_subparsers(dest="command", required=True)

    p_render = sub.add_parser("render", help="render one plot spec")
    p_render.add_argument("--spec", required=True,
                          help="spec file path or packaged spec name")
    p_render.add_argument("--out", required=True, help="output directory")
    p_render.add_argument("--traces", default=".",
                          help="directory holding the trace CSVs "
                               "(default: current directory)")

    sub.add_parser("list", help="list packaged plot specs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in packaged_specs():
            print(name)
        return EXIT_OK
    try:
        spec = load_spec(args.spec)
        written = render(spec, args.out, trace_dir=args.traces)
    except PlotSpecError as exc:
        print(f"plot spec error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("nothing rendered: every panel was empty", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
