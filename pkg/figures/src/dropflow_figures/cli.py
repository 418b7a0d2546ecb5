"""Command line: render one figure kind from output files.

    dropflow-figures snapshots <snap files...> [--times t1 t2] -o out.png
    dropflow-figures convergence <convergence.txt> -o out.png
    dropflow-figures truncation <ewald_errors.txt> -o out.png
    dropflow-figures drift <diagnostics.txt> -o out.png
"""

import argparse
import sys

from . import io, plots


def main(argv=None):
    parser = argparse.ArgumentParser(prog="dropflow-figures",
                                     description=__doc__)
    parser.add_argument("kind", choices=["snapshots", "convergence",
                                         "truncation", "drift"])
    parser.add_argument("inputs", nargs="+", help="input data files")
    parser.add_argument("-o", "--output", required=True)
    parser.add_argument("--times", nargs="*", type=float, default=None,
                        help="snapshot times to select (nearest stored)")
    parser.add_argument("--box", nargs=2, type=float, default=None,
                        help="periodic cell lengths to draw")
    args = parser.parse_args(argv)
    try:
        if args.kind == "snapshots":
            plots.plot_snapshots(args.inputs, args.output, times=args.times,
                                 box=args.box)
        elif args.kind == "convergence":
            plots.plot_convergence(args.inputs[0], args.output)
        elif args.kind == "truncation":
            plots.plot_truncation(args.inputs[0], args.output)
        else:
            plots.plot_drift(args.inputs[0], args.output)
    except (io.ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
