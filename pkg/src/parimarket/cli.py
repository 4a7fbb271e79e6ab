"""Command-line entry point.

Three subcommands: ``run`` executes an experiment config and writes its
artifacts, ``validate`` checks a config without running anything, ``report``
recomputes the aggregate from an existing results directory. Exit codes:
0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import ConfigError, aggregate, load_config, read_summaries, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parimarket",
        description="Parimutuel betting-game simulator with survival diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment and write its artifacts")
    run_p.add_argument("--config", required=True, help="path to the experiment JSON")
    run_p.add_argument("--seed", type=int, default=None, help="override the root seed")
    run_p.add_argument("--replicas", type=int, default=None, help="override the replica count")
    run_p.add_argument("--rounds", type=int, default=None, help="override the round count")
    run_p.add_argument("--out", default="out", help="output directory (default: out)")
    run_p.add_argument("--thin", type=int, default=None, help="record every j-th round")
    run_p.add_argument("--jobs", type=int, default=1, help="parallel replica workers")

    val_p = sub.add_parser("validate", help="validate a config without running it")
    val_p.add_argument("--config", required=True, help="path to the experiment JSON")

    rep_p = sub.add_parser("report", help="recompute the aggregate of a results directory")
    rep_p.add_argument("--in", dest="in_dir", required=True, help="results directory")
    return parser


def _apply_overrides(config, args) -> None:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("root_seed", "must be a non-negative integer")
        config.root_seed = args.seed
    if args.replicas is not None:
        if args.replicas < 1:
            raise ConfigError("replicas", "must be an integer >= 1")
        config.replicas = args.replicas
    if args.rounds is not None:
        if args.rounds < 1:
            raise ConfigError("rounds", "must be an integer >= 1")
        config.rounds = args.rounds
    if args.thin is not None:
        if args.thin < 1:
            raise ConfigError("thin", "must be an integer >= 1")
        config.thin = args.thin


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            _apply_overrides(config, args)
            report = run_experiment(config, args.out, jobs=args.jobs)
            print(json.dumps(report, indent=2))
            return 0
        if args.command == "validate":
            config = load_config(args.config)
            config.validate()
            print(f"ok: {config.replicas} replica(s) x {config.rounds} round(s)")
            return 0
        if args.command == "report":
            summaries = read_summaries(args.in_dir)
            print(json.dumps(aggregate(summaries), indent=2))
            return 0
        parser.error(f"unknown command {args.command!r}")
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
