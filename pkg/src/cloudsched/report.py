"""Figure rendering for run reports.

Figures are written next to the delimited outputs: per run an hourly
energy/cost profile and a server-hour utilization map, plus one comparison
chart of indicators across approaches at the experiment level.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .energy import EnergyReport
from .platform import AllocationLedger


def render_run_figures(run_dir: Path, ledger: AllocationLedger, energy: EnergyReport) -> list[Path]:
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    hours = [h["hour"] for h in energy.per_hour]
    kwh = [h["energy_kwh"] for h in energy.per_hour]
    cost = [h["cost"] for h in energy.per_hour]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(hours, kwh, color="#4878d0", label="energy (kWh)")
    ax.set_xlabel("hour")
    ax.set_ylabel("energy (kWh)")
    ax2 = ax.twinx()
    ax2.plot(hours, cost, color="#d65f5f", marker="o", markersize=3, label="cost")
    ax2.set_ylabel("cost")
    ax.set_title("Hourly energy and cost")
    fig.tight_layout()
    path = fig_dir / "hourly_energy_cost.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    paths.append(path)

    plat = ledger.platform
    caps = np.array([s.cpu_capacity for s in plat.servers])
    hour_ur = ledger.cpu_hour / (caps[:, None] * 60.0)
    fig, ax = plt.subplots(figsize=(8, 4))
    im = ax.imshow(hour_ur, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_xlabel("hour")
    ax.set_ylabel("server")
    ax.set_title("Mean CPU utilization per server-hour")
    fig.colorbar(im, ax=ax, label="utilization")
    fig.tight_layout()
    path = fig_dir / "server_utilization.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    paths.append(path)
    return paths


def render_comparison_figure(out_dir: Path, rows: list[dict]) -> Path | None:
    """Grouped bars of per-approach mean indicators."""
    if not rows:
        return None
    indicators = ("ece", "ee", "tfr", "uor", "ddl_vr", "reward_rate", "rejection_rate")
    approaches = sorted({r["approach"] for r in rows})
    means = {}
    for approach in approaches:
        group = [r for r in rows if r["approach"] == approach]
        means[approach] = [sum(float(r[k]) for r in group) / len(group) for k in indicators]
    # Normalize each indicator by its max across approaches for one shared axis.
    peak = [max(abs(means[a][i]) for a in approaches) or 1.0 for i in range(len(indicators))]

    fig, ax = plt.subplots(figsize=(10, 4.5))
    width = 0.8 / len(approaches)
    x = np.arange(len(indicators))
    for j, approach in enumerate(approaches):
        vals = [means[approach][i] / peak[i] for i in range(len(indicators))]
        ax.bar(x + j * width, vals, width=width, label=approach)
    ax.set_xticks(x + width * (len(approaches) - 1) / 2)
    ax.set_xticklabels(indicators)
    ax.set_ylabel("mean (normalized per indicator)")
    ax.set_title("Indicator comparison across approaches")
    ax.legend()
    fig.tight_layout()
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    path = fig_dir / "indicators_comparison.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
