"""Command line entry: render figures from simulator artifacts.

    chaoswalk-render render --spec spec.json
    chaoswalk-render loglog --csv encounters.csv --x N --y mean_count --out enc.svg
    chaoswalk-render semilog --csv ldp.csv --x m --y p_hat --out ldp.svg
    chaoswalk-render density --csv spectrum_density.csv --out density.svg
    chaoswalk-render cf --csv clt_annealed.csv --out cf.svg

Images default to SVG; any extension matplotlib understands works.
"""

import argparse
import sys

from chaoswalk_plots.render import PlotDataError, PlotSpec, render

_KIND_BY_COMMAND = {
    "loglog": "loglog_fit",
    "semilog": "semilog_fit",
    "density": "density",
    "cf": "cf_decay",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaoswalk-render",
        description="Scaling figures from chaoswalk CSV/JSON artifacts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    spec_cmd = sub.add_parser("render", help="render from a JSON plot spec")
    spec_cmd.add_argument("--spec", required=True, help="PlotSpec JSON file")

    for name, kind in _KIND_BY_COMMAND.items():
        p = sub.add_parser(name, help=f"{kind} plot from a CSV")
        p.add_argument("--csv", required=True, dest="csv_path")
        p.add_argument("--out", required=True, dest="out_path")
        if kind in ("loglog_fit", "semilog_fit"):
            p.add_argument("--x", required=True)
            p.add_argument("--y", required=True)
        else:
            p.add_argument("--x")
            p.add_argument("--y")
        p.add_argument("--xlabel")
        p.add_argument("--ylabel")
        p.add_argument("--title")
        p.add_argument("--fit-json", dest="fit_json",
                       help="summary JSON to cross-check the slope against")
        p.add_argument("--fit-key", dest="fit_key", default="fit")
    return parser


def _spec_from_args(args) -> PlotSpec:
    if args.command == "render":
        return PlotSpec.from_file(args.spec)
    fields = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command",) and v is not None
    }
    return PlotSpec(kind=_KIND_BY_COMMAND[args.command], **fields)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = _spec_from_args(args)
        result = render(spec)
    except (PlotDataError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if result.get("slope") is not None:
        print(f"{spec.out_path}: slope {result['slope']:.6g}, "
              f"r2 {result['r_squared']:.4f}")
    else:
        print(spec.out_path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
