"""Command-line entry point: ``eoslab <subcommand> --config PATH``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from eoslab import runner

RUN_COMMANDS = ("train", "flow", "quadratic", "diagnose", "sweep")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eoslab", description="Edge-of-stability experiment runner")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUN_COMMANDS:
        s = sub.add_parser(name, help=f"run a config as {name}" if name != "sweep"
                           else "run every point of a config in its own mode")
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, help="output directory (default: output.dir/name)")
        s.add_argument("--seed", type=int, help="override the init and shuffle seeds")
        s.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    s = sub.add_parser("summarize", help="merge summary.csv files into one comparison table")
    s.add_argument("paths", nargs="+", type=Path)
    s.add_argument("--out", type=Path)
    s = sub.add_parser("plot", help="SVG line charts from a trace.csv")
    s.add_argument("trace", type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--columns", default="loss,sharpness")
    return p


def _run(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides = {"model.seed": str(args.seed), "optimizer.seed": str(args.seed)}
    runs = runner.load_configs(args.config, overrides)
    first = runs[0][1]
    out = args.out or Path(first["output.dir"]) / first["name"]
    mode = None if args.command == "sweep" else args.command
    rows = runner.run_many(runs, out, mode, max(1, args.jobs))
    for row in rows:
        be = row["breakeven_step"]
        print(f"{row['run']}: status={row['status']} steps={row['iterations']} "
              f"final_loss={row['final_loss']:.6g} breakeven={'-' if be is None else be}")
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in RUN_COMMANDS:
            return _run(args)
        if args.command == "summarize":
            rows = runner.collect_summaries(args.paths)
            if not rows:
                print("no summary.csv files found", file=sys.stderr)
                return 1
            if args.out:
                runner.write_rows(args.out, runner.SUMMARY_COLUMNS, rows)
            else:
                runner.write_rows("/dev/stdout", runner.SUMMARY_COLUMNS, rows)
            return 0
        svg = runner.svg_chart(runner.read_trace(args.trace), tuple(args.columns.split(",")))
        out = args.out or args.trace.with_suffix(".svg")
        out.write_text(svg)
        print(f"wrote {out}")
        return 0
    except runner.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
