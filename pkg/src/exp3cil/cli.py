"""Command-line entry point.

Examples::

    exp3cil run --config smoke.cfg --out results/smoke
    exp3cil run --config exp.cfg --mode fixed --beta 1 --gamma 0 --lambda 0.05 --delta 1
    exp3cil compare results/online/summary.json results/fixed/summary.json --out results/cmp
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .errors import Exp3CILError
from .hyperspace import Action

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _seeds(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exp3cil", description="Online hyperparameter policies for class-incremental learning")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment matrix")
    run.add_argument("--config", required=True, help="INI config file")
    run.add_argument("--mode", choices=harness.MODES)
    run.add_argument("--setting", choices=("tfh", "tfs", "both"))
    run.add_argument("--seeds", type=_seeds, help="comma-separated seeds, e.g. 1,2,3")
    run.add_argument("--workers", type=int, help="parallel worker processes")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--ablation", help="comma-separated dimensions optimized in ablation mode")
    for name in ("beta", "gamma", "lambda"):
        run.add_argument(f"--{name}", type=float, help=f"fixed-mode {name}")
    run.add_argument("--delta", type=int, choices=(0, 1), help="fixed-mode classifier (1 = NCM)")

    cmp_ = sub.add_parser("compare", help="tabulate several summary.json files")
    cmp_.add_argument("summaries", nargs="+")
    cmp_.add_argument("--out", default="comparison")
    return parser


def _apply_overrides(config: harness.ExperimentConfig, args) -> harness.ExperimentConfig:
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.seeds:
        changes["seeds"] = args.seeds
    if args.workers:
        changes["workers"] = args.workers
    if args.ablation:
        changes["ablation"] = tuple(s.strip() for s in args.ablation.split(",") if s.strip())
    if args.setting:
        changes["schedule"] = replace(config.schedule, setting=args.setting)
    fixed = {"beta": args.beta, "gamma": args.gamma, "lambda": args.__dict__["lambda"], "delta": args.delta}
    if any(v is not None for v in fixed.values()):
        base = config.baseline.as_dict()
        base.update({k: v for k, v in fixed.items() if v is not None})
        changes["baseline"] = Action.from_dict(base)
    return replace(config, **changes) if changes else config


def run_cli(argv=None) -> int:
    level = os.environ.get("EXP3CIL_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = _apply_overrides(harness.load_config(args.config), args)
            summary = harness.run_matrix(config)
            out = harness.write_outputs(summary, args.out)
            if summary["protocol"]["premature_test_reads"]:
                print("error: held-out test data was read before evaluation", file=sys.stderr)
                return 3
            print(f"{summary['method']}: headline {harness.headline(summary):.4f} -> {out}")
        else:
            summaries = []
            for p in args.summaries:
                try:
                    summaries.append(json.loads(Path(p).read_text()))
                except OSError as exc:
                    raise harness.ConfigError(f"cannot read summary {p}: {exc}") from None
            report = harness.compare_report(summaries, args.out)
            for row in report["rows"]:
                print(row)
    except (Exp3CILError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
