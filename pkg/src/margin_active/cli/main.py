"""Command-line entry point: ``margin-active {simulate,lowerbound,verify-dist,plot}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DomainError
from .config import load_config
from .experiment import run_experiment, run_lowerbound_study, verify_dist
from .plot import emit_plot


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides config and MARGIN_ACTIVE_SEED)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--mc-points", type=int, help="Monte-Carlo test points for risk estimates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="margin-active", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("simulate", help="rate experiment over budgets, seeds, learners and specs"))
    _common(sub.add_parser("lowerbound", help="ensemble study on the hard-instance family"))
    _common(sub.add_parser("verify-dist", help="check smoothness, margin and density assumptions"))
    p = sub.add_parser("plot", help="log-log chart from a runs.csv or ensemble.csv table")
    p.add_argument("table", help="CSV written by simulate or lowerbound")
    p.add_argument("--out", default="rates.svg", help="SVG path")
    return parser


def _read_table(path: str) -> dict[str, list[tuple[float, float]]]:
    sums: dict[str, dict[int, list[float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label = row["learner"] + (f" / {row['spec']}" if "spec" in row else "")
            sums.setdefault(label, {}).setdefault(int(row["n"]), []).append(float(row["risk"]))
    return {k: [(n, float(np.mean(v))) for n, v in sorted(d.items())] for k, d in sums.items()}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            print(emit_plot(_read_table(args.table), args.out))
            return 0
        cfg = load_config(args.config, seed=args.seed, output=args.out, mc_points=args.mc_points)
        if args.command == "simulate":
            res = run_experiment(cfg, jobs=args.jobs)
            for fit in res.fits:
                slope = "n/a" if fit["slope"] is None else f"{fit['slope']:.3f}"
                print(f"{fit['learner']:>14s}  {fit['spec']:<28s} slope {slope}")
            print(f"{len(res.records)} runs written to {cfg.output}")
            return 0
        if args.command == "lowerbound":
            summary = run_lowerbound_study(cfg, jobs=args.jobs)
            for name, fit in summary["fits"].items():
                slope = "n/a" if fit["slope"] is None else f"{fit['slope']:.3f}"
                print(f"{name:>18s}  slope {slope}")
            return 0
        bundle = verify_dist(cfg)
        for name, rep in bundle["reports"].items():
            print(f"{name:>15s}  {'pass' if rep['passed'] else 'FAIL'}")
        return 0 if bundle["passed"] else 1
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
