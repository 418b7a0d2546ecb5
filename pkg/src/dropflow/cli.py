"""Command-line entry points: run scenarios, convergence studies, the
truncation-error harness and Ewald parameter selection."""

import argparse
import sys

import numpy as np

from . import ewald, scenarios

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(arg):
    if arg.startswith("preset:"):
        return scenarios.parse_config(scenarios.preset_text(arg[7:]))
    with open(arg) as fh:
        return scenarios.parse_config(fh.read())


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dropflow",
        description="Boundary-integral simulation of drops in doubly "
                    "periodic Stokes flow")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("config", help="config file or preset:<name>")
    p_run.add_argument("-o", "--out-dir", default=None)
    p_run.add_argument("--quiet", action="store_true")

    p_conv = sub.add_parser("convergence", help="self-convergence study")
    p_conv.add_argument("config")
    p_conv.add_argument("--spacings", nargs="+", type=float, required=True)
    p_conv.add_argument("--reference", type=float, required=True)
    p_conv.add_argument("-o", "--out-dir", default=None)

    p_ew = sub.add_parser("ewald-errors",
                          help="measured vs estimated truncation errors")
    p_ew.add_argument("-o", "--output", default="ewald_errors.txt")
    p_ew.add_argument("--xis", nargs="+", type=float,
                      default=[5.0, 10.0, 15.0])
    p_ew.add_argument("--sources", type=int, default=1000)
    p_ew.add_argument("--targets", type=int, default=100)

    p_par = sub.add_parser("params", help="print selected Ewald parameters")
    p_par.add_argument("--tol", type=float, required=True)
    p_par.add_argument("--rc", type=float, required=True)
    p_par.add_argument("--L", type=float, default=2 * np.pi)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (scenarios.ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _dispatch(args):
    if args.command == "run":
        cfg = _load_config(args.config)

        def progress(t, log):
            if not args.quiet:
                print(f"t = {t:.6f}  accepted = {log.accepted} "
                      f"rejected = {log.rejected} "
                      f"solves = {log.velocity_solves}", flush=True)

        out = scenarios.run(cfg, out_dir=args.out_dir, progress=progress)
        print(f"done: {out.manifest['accepted']} accepted steps, "
              f"{out.manifest['velocity_solves']} velocity solves")
        return 0
    if args.command == "convergence":
        cfg = _load_config(args.config)
        rows = scenarios.self_convergence(cfg, args.spacings, args.reference,
                                          out_dir=args.out_dir)
        for r in rows:
            line = (f"spacing {r['spacing']:g} t {r['time']:g} "
                    f"drop {r['drop']} err {r['position_error']:.3e}")
            if "surfactant_error" in r:
                line += f" rho_err {r['surfactant_error']:.3e}"
            print(line)
        return 0
    if args.command == "ewald-errors":
        rows = scenarios.ewald_error_table(xis=args.xis, n_src=args.sources,
                                           n_tgt=args.targets)
        scenarios.write_error_table(args.output, rows)
        print(f"wrote {len(rows)} rows to {args.output}")
        return 0
    if args.command == "params":
        box = ewald.PeriodicBox(args.L, args.L)
        p = ewald.select_params(args.tol, args.rc, box)
        print(f"xi = {p.xi:.6f}")
        print(f"r_c = {p.r_c:.6f}")
        print(f"k_max = {p.k_max:.6f}")
        print(f"grid = {p.grid_m1} x {p.grid_m2}")
        print(f"window_p = {p.window_p}")
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
