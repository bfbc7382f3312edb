"""Figure rendering CLI.

    stfosls-figures preset <name|all> [--results DIR] [--out DIR]
    stfosls-figures render --spec spec.json

A spec file is a JSON object with the FigureSpec fields; curves are given
as {"x": ..., "y": ..., "label": ..., "style": ...} objects.
"""

import argparse
import json
import sys

from .core import Curve, FigureError, FigureSpec, render
from .presets import ALL_PRESETS, build_preset


def spec_from_json(path):
    raw = json.loads(open(path).read())
    curves = [Curve(**c) for c in raw.pop("curves")]
    return FigureSpec(curves=curves, **raw)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="stfosls-figures")
    sub = parser.add_subparsers(dest="command", required=True)
    pre = sub.add_parser("preset", help="render a named benchmark figure")
    pre.add_argument("name", help=f"one of {', '.join(ALL_PRESETS)}, or 'all'")
    pre.add_argument("--results", default="results")
    pre.add_argument("--out", default="figures_out")
    ren = sub.add_parser("render", help="render from a FigureSpec JSON file")
    ren.add_argument("--spec", required=True)
    args = parser.parse_args(argv)
    failures = 0
    if args.command == "preset":
        names = ALL_PRESETS if args.name == "all" else (args.name,)
        for name in names:
            try:
                spec = build_preset(name, args.results, args.out)
                render(spec)
                print(f"wrote {spec.output}")
            except (FigureError, KeyError, FileNotFoundError) as exc:
                print(f"error ({name}): {exc}", file=sys.stderr)
                failures += 1
    else:
        try:
            spec = spec_from_json(args.spec)
            render(spec)
            print(f"wrote {spec.output}")
        except (FigureError, KeyError, FileNotFoundError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
