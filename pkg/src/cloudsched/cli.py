"""Command-line interface.

Subcommands:
  run       run an experiment from a JSON config (plus overrides)
  validate  check a config, its platform, and its workload source
  stats     print aggregate statistics of a trace file

The H2O_LOG environment variable (off|info|debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import (
    APPROACHES,
    ConfigError,
    ExperimentConfig,
    build_platform,
    build_workload,
    config_from_dict,
    default_config_dict,
    load_config,
)
from .domain import validate_job, validate_platform
from .experiment import run_experiment
from .workload import TraceError, parse_trace, workload_stats


def _setup_logging() -> None:
    level_name = os.environ.get("H2O_LOG", "off").lower()
    levels = {"off": logging.CRITICAL + 10, "info": logging.INFO, "debug": logging.DEBUG}
    level = levels.get(level_name, logging.CRITICAL + 10)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    logging.getLogger("cloudsched").setLevel(level)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudsched", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", help="path to a JSON experiment config")
    run.add_argument("--approach", choices=APPROACHES, help="override the configured approach")
    run.add_argument("--seed", type=int, help="run a single seed")
    run.add_argument("--seeds", help="comma-separated seed list")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    run.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    val = sub.add_parser("validate", help="validate a config and its inputs")
    val.add_argument("--config", required=True)

    stats = sub.add_parser("stats", help="print workload statistics of a trace file")
    stats.add_argument("--trace", required=True)
    return parser


def _resolve_run_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.approach:
        cfg = replace(cfg, approach=args.approach)
    if args.seed is not None and args.seeds:
        raise ConfigError("give either --seed or --seeds, not both", exit_code=2)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.seeds:
        try:
            cfg = replace(cfg, seeds=tuple(int(s) for s in args.seeds.split(",") if s))
        except ValueError:
            raise ConfigError(f"bad --seeds value {args.seeds!r}", exit_code=2) from None
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.no_figures:
        cfg = replace(cfg, render_figures=False)
    return cfg


def _cmd_run(args) -> int:
    cfg = _resolve_run_config(args)
    if args.print_config:
        print(json.dumps(cfg.resolved_dict(), sort_keys=True, indent=2))
        return 0
    paths = run_experiment(cfg)
    print(json.dumps(paths, indent=2))
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    platform = build_platform(cfg.platform_spec)
    check = validate_platform(platform)
    if not check:
        print(f"platform invalid: {check.error} ({check.detail})", file=sys.stderr)
        return 1
    jobs = build_workload(cfg, platform, cfg.seeds[0])
    for job in jobs:
        result = validate_job(job)
        if not result:
            print(f"job {job.job_id} invalid: {result.error} ({result.detail})", file=sys.stderr)
            return 1
    print(f"ok: platform {cfg.scale_label}, {len(jobs)} jobs, approach {cfg.approach}")
    return 0


def _cmd_stats(args) -> int:
    jobs = parse_trace(Path(args.trace).read_text(encoding="utf-8"))
    stats = workload_stats(jobs)
    print(
        json.dumps(
            {
                "task_count": stats.task_count,
                "total_cpu_units": stats.total_cpu_units,
                "cpu_variance": stats.cpu_variance,
                "mem_variance": stats.mem_variance,
                "span_minutes": stats.span_minutes,
                "job_count": len(jobs),
            },
            sort_keys=True,
            indent=2,
        )
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "stats":
            return _cmd_stats(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TraceError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
