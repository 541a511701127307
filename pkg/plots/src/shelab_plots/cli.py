"""Command line front end: `plot <kind> --in table.csv --out figure.png`.

Exit codes: 0 on success, 2 for any input problem (unknown kind, missing
file, missing column, malformed values, unreadable report).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import REQUIRED_COLUMNS, PlotError, PlotJob, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot",
        description="render one figure from the laboratory's CSV tables")
    parser.add_argument("kind", choices=sorted(REQUIRED_COLUMNS),
                        help="which figure to draw")
    parser.add_argument("--in", dest="sources", action="append",
                        required=True, metavar="CSV",
                        help="input table; repeat to overlay several files")
    parser.add_argument("--report", metavar="JSON", default=None,
                        help="run report used for labels and the caption")
    parser.add_argument("--out", required=True, metavar="PNG",
                        help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = PlotJob(kind=args.kind,
                  sources=tuple(Path(src) for src in args.sources),
                  out=Path(args.out),
                  report=Path(args.report) if args.report else None)
    try:
        written = render(job)
    except PlotError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {written}")
    return 0


def entry() -> None:
    sys.exit(main())
