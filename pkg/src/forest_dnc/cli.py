"""Command line entry points: run an experiment, or recompute metrics."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .harness import ExperimentConfig, StageError, experiment_config, recompute_metrics, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forest-dnc")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a divide-and-conquer experiment end to end")
    run.add_argument("--experiment", choices=("bimodal", "moon", "misspec"), default="bimodal")
    run.add_argument("--K", type=int, default=None, help="number of shards")
    run.add_argument("--seed", type=int, default=None, help="master seed")
    run.add_argument("--paper-scale", action="store_true", help="use the full-size experiment budgets")
    run.add_argument("--data-dist", default=None, help="override the data law (e.g. lognormal)")
    run.add_argument("--config", default=None, help="key = value config file; flags override its fields")
    run.add_argument("--out", required=True, help="output directory")

    met = sub.add_parser("metrics", help="recompute metrics.json from an existing run directory")
    met.add_argument("--out", required=True, help="run directory to rescan")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.from_text(Path(args.config).read_text())
        overrides = {"out_dir": args.out}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.K is not None:
            overrides["K"] = args.K
        if args.data_dist is not None:
            overrides["data_dist"] = args.data_dist
        return replace(cfg, **overrides)
    return experiment_config(
        args.experiment,
        K=args.K,
        seed=args.seed if args.seed is not None else 0,
        out_dir=args.out,
        paper_scale=args.paper_scale,
        data_dist=args.data_dist,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            doc = run_experiment(_config_from_args(args))
            for method, entry in doc.get("wasserstein1", {}).items():
                print(f"W1 sum to oracle [{method}]: {entry['sum']:.4f}")
            print(f"artifacts written to {args.out}")
        elif args.command == "metrics":
            recompute_metrics(args.out)
            print(f"metrics.json refreshed in {args.out}")
    except StageError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
