"""Command-line entry point: ``otss {panel,sweep,theory,runtime} --config FILE``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex

HELP = {
    "panel": "fit all methods on every seed and benchmark variant",
    "sweep": "vary one benchmark knob and record regret curves",
    "theory": "run the numerical theory checks",
    "runtime": "time EM against OTSS with model selection included",
}

RUNNERS = {
    "panel": ex.run_panel,
    "sweep": ex.run_sweep,
    "theory": ex.run_theory,
    "runtime": ex.run_runtime,
}


def build_parser():
    p = argparse.ArgumentParser(prog="otss", description="Benchmark harness for contextual decision weights.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        s = sub.add_parser(name, help=HELP[name])
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", default="results", help="output root directory")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for (seed, benchmark) tasks")
        s.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
        s.add_argument("--no-plots", action="store_true", help="write CSV/text outputs only")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _print_csv(path):
    print(f"== {path}")
    for row in ex.read_csv(path):
        print("  " + ", ".join(f"{k}={v}" for k, v in row.items() if v != ""))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = ex.load_config(args.config)
        res = RUNNERS[args.command](cfg, args.out, jobs=args.jobs, seed_offset=args.seed_offset, plots=not args.no_plots)
    except ex.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    if args.command == "panel":
        dirs, ok = res
        for d in dirs.values():
            _print_csv(d / "aggregate.csv")
    elif args.command == "sweep":
        d, ok = res
        print(f"sweep rows written to {d / 'sweep.csv'}")
    elif args.command == "theory":
        d, ok = res
        print((d / "theory_report.txt").read_text(), end="")
    else:
        d, _ = res
        ok = True
        _print_csv(d / "runtime.csv")
    if not ok:
        print("FAILED: a hard invariant or theory check did not hold", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
