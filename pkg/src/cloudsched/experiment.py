"""Experiment orchestration: build, run, measure, and write reports.

Each (approach, seed) run produces a directory with the JSON report, the
allocation ledger CSV, the training trace CSV, and figures. After all runs
the cross-run comparison table is rebuilt from every run report found in
the output directory, so separate invocations against the same directory
accumulate into one table. All files are written atomically and a failed
run's partial outputs are removed.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentConfig, build_platform, build_workload
from .domain import Job, PlatformConfig
from .energy import EnergyReport, energy_and_cost
from .hierarchy import HierarchicalScheduler, TraceRow, trace_to_csv
from .metrics import (
    Indicators,
    compute_indicators,
    comparison_rows_to_csv,
    config_digest,
    indicators_report,
)
from .platform import AllocationLedger
from .rr import run_rr_baseline

log = logging.getLogger("cloudsched")


@dataclass
class RunResult:
    approach: str
    seed: int
    ledger: AllocationLedger
    trace: list[TraceRow]
    energy: EnergyReport
    indicators: Indicators
    flags: list[str]
    report: dict


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def run_single(cfg: ExperimentConfig, seed: int, jobs: list[Job] | None = None,
               platform: PlatformConfig | None = None) -> RunResult:
    """Run one approach on one seed and compute its report."""
    platform = platform if platform is not None else build_platform(cfg.platform_spec)
    jobs = jobs if jobs is not None else build_workload(cfg, platform, seed)
    approach = cfg.approach
    always_on = approach == "rr"
    if approach == "rr":
        ledger = run_rr_baseline(jobs, platform)
        trace: list[TraceRow] = []
    else:
        # hdrl is the same scheduler with the hybrid fallback forced off.
        sched_cfg = replace(cfg.scheduler, hybrid_enabled=approach == "h2o")
        scheduler = HierarchicalScheduler(platform, cfg.pricing, sched_cfg, seed)
        ledger, trace = scheduler.run(jobs)
    energy = energy_and_cost(ledger, platform, cfg.pricing, always_on=always_on)
    indicators, flags = compute_indicators(ledger, energy, servers_always_on=always_on)
    semantic = {k: v for k, v in cfg.resolved_dict().items() if k not in ("output_dir", "render_figures")}
    digest = config_digest(semantic)
    report = indicators_report(indicators, flags, digest)
    report["energy"] = energy.to_json_dict()
    report["run"] = {
        "approach": approach,
        "seed": seed,
        "scale": cfg.scale_label,
        "scenario": cfg.scenario_label,
        "servers_always_on": always_on,
    }
    log.info("run %s seed %s: %s", approach, seed, indicators.as_dict())
    return RunResult(approach, seed, ledger, trace, energy, indicators, flags, report)


def _write_run(out_dir: Path, cfg: ExperimentConfig, result: RunResult) -> Path:
    run_dir = out_dir / f"run_{result.approach}_seed{result.seed}"
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(run_dir / "report.json", json.dumps(result.report, sort_keys=True, indent=2) + "\n")
        _atomic_write(run_dir / "ledger.csv", result.ledger.export_csv())
        _atomic_write(run_dir / "trace.csv", trace_to_csv(result.trace))
        if cfg.render_figures:
            from .report import render_run_figures

            render_run_figures(run_dir, result.ledger, result.energy)
    except BaseException:
        shutil.rmtree(run_dir, ignore_errors=True)
        raise
    return run_dir


def _comparison_rows(out_dir: Path) -> list[dict]:
    rows = []
    for report_path in sorted(out_dir.glob("run_*/report.json")):
        data = json.loads(report_path.read_text(encoding="utf-8"))
        row = {
            "run_id": report_path.parent.name,
            "approach": data["run"]["approach"],
            "scale": data["run"]["scale"],
            "scenario": data["run"]["scenario"],
            "seed": data["run"]["seed"],
        }
        row.update(data["indicators"])
        rows.append(row)
    return rows


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every seed of the configured approach and rebuild the comparison
    table. Returns the paths of everything written."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    platform = build_platform(cfg.platform_spec)
    run_dirs = []
    for seed in cfg.seeds:
        result = run_single(cfg, seed, platform=platform)
        run_dirs.append(_write_run(out_dir, cfg, result))

    rows = _comparison_rows(out_dir)
    comparison = out_dir / "comparison.csv"
    _atomic_write(comparison, comparison_rows_to_csv(rows))
    paths = {"runs": [str(p) for p in run_dirs], "comparison": str(comparison)}
    if cfg.render_figures and rows:
        from .report import render_comparison_figure

        fig = render_comparison_figure(out_dir, rows)
        if fig is not None:
            paths["comparison_figure"] = str(fig)
    return paths
