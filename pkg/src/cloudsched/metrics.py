"""Run indicators: efficiency, utilization, and QoS rates.

Everything is recomputed from the allocation ledger and the energy report;
zero denominators produce a flag and a 0.0 value instead of failing.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass

from .energy import EnergyReport
from .platform import AllocationLedger

UOR_BAND = (0.60, 0.80)

COMPARISON_HEADER = "run_id,approach,scale,scenario,seed,ece,ee,tfr,uor,ddl_vr,reward_rate,rejection_rate"

ADMISSION_REASON = "admission_unfulfillable"


@dataclass(frozen=True)
class Indicators:
    """The six quality/efficiency indicators plus the rejection rate."""

    ece: float
    ee: float
    tfr: float
    uor: float
    ddl_vr: float
    reward_rate: float
    rejection_rate: float

    def as_dict(self) -> dict:
        return {
            "ece": self.ece,
            "ee": self.ee,
            "tfr": self.tfr,
            "uor": self.uor,
            "ddl_vr": self.ddl_vr,
            "reward_rate": self.reward_rate,
            "rejection_rate": self.rejection_rate,
        }


def compute_indicators(
    ledger: AllocationLedger,
    energy: EnergyReport,
    *,
    servers_always_on: bool = False,
    uor_band: tuple[float, float] = UOR_BAND,
) -> tuple[Indicators, list[str]]:
    """Derive all indicators from a completed run.

    - ece / ee: executed CPU per unit cost / per kWh.
    - tfr: turned-off server-hours over all server-hours (zero for policies
      that keep servers always on).
    - uor: working server-hours whose mean utilization falls in the optimal
      band, over working server-hours.
    - ddl_vr: tasks that hit a deadline-bound recycle or rejection, over
      admitted tasks.
    - reward_rate: scheduled tasks starting within one minute of their
      priority value, over scheduled tasks.
    - rejection_rate: rejected tasks over all tasks.
    """
    flags: list[str] = []

    def ratio(num: float, den: float, name: str) -> float:
        if den == 0:
            flags.append(f"zero_denominator:{name}")
            return 0.0
        return num / den

    ece = ratio(energy.total_cpu_processed, energy.total_cost, "ece")
    ee = ratio(energy.total_cpu_processed, energy.total_energy_kwh, "ee")

    plat = ledger.platform
    total_server_hours = plat.n_servers * plat.horizon_hours
    if servers_always_on:
        off_hours = 0
        working = total_server_hours
        in_band = 0
        for i, s in enumerate(plat.servers):
            for h in range(plat.horizon_hours):
                ur = ledger.cpu_hour[i, h] / (s.cpu_capacity * 60.0)
                if uor_band[0] <= ur <= uor_band[1]:
                    in_band += 1
    else:
        off_hours = int((ledger.busy_minutes == 0).sum())
        working = total_server_hours - off_hours
        in_band = 0
        for i, s in enumerate(plat.servers):
            for h in range(plat.horizon_hours):
                if ledger.busy_minutes[i, h] == 0:
                    continue
                ur = ledger.cpu_hour[i, h] / (s.cpu_capacity * 60.0)
                if uor_band[0] <= ur <= uor_band[1]:
                    in_band += 1
    tfr = ratio(off_hours, total_server_hours, "tfr")
    uor = ratio(in_band, working, "uor")

    outcomes = list(ledger.outcomes.values())
    admitted = [o for o in outcomes if o.reject_reason != ADMISSION_REASON]
    scheduled = [o for o in outcomes if o.decision is not None]
    ddl_hits = sum(1 for o in admitted if o.ddl_event)
    ddl_vr = ratio(ddl_hits, len(admitted), "ddl_vr")

    on_priority = sum(
        1
        for o in scheduled
        if o.task.priority - 1 <= o.decision.start_minute % 60 <= o.task.priority + 1
    )
    reward_rate = ratio(on_priority, len(scheduled), "reward_rate")

    rejected = sum(1 for o in outcomes if o.decision is None)
    rejection_rate = ratio(rejected, len(outcomes), "rejection_rate")

    return (
        Indicators(ece, ee, tfr, uor, ddl_vr, reward_rate, rejection_rate),
        flags,
    )


def config_digest(config: dict) -> str:
    """Stable hex digest of a JSON-serializable configuration."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def indicators_report(indicators: Indicators, flags: list[str], digest: str) -> dict:
    return {"indicators": indicators.as_dict(), "flags": flags, "config_digest": digest}


def comparison_rows_to_csv(rows: list[dict]) -> str:
    """Render per-run rows plus per-approach mean/stdev into the comparison
    table. Aggregates are appended with run_id ``<approach>-mean``/``-stdev``."""
    numeric = ("ece", "ee", "tfr", "uor", "ddl_vr", "reward_rate", "rejection_rate")
    out = io.StringIO()
    out.write(COMPARISON_HEADER + "\n")

    def emit(row: dict) -> None:
        cells = [
            str(row.get("run_id", "")),
            str(row.get("approach", "")),
            str(row.get("scale", "")),
            str(row.get("scenario", "")),
            str(row.get("seed", "")),
        ] + [repr(float(row[k])) for k in numeric]
        out.write(",".join(cells) + "\n")

    ordered = sorted(rows, key=lambda r: (r["approach"], str(r["seed"])))
    for row in ordered:
        emit(row)
    approaches = sorted({r["approach"] for r in ordered})
    for approach in approaches:
        group = [r for r in ordered if r["approach"] == approach]
        mean = {k: sum(float(r[k]) for r in group) / len(group) for k in numeric}
        stdev = {
            k: math.sqrt(sum((float(r[k]) - mean[k]) ** 2 for r in group) / len(group)) for k in numeric
        }
        base = {
            "approach": approach,
            "scale": group[0].get("scale", ""),
            "scenario": group[0].get("scenario", ""),
            "seed": "",
        }
        emit({**base, **mean, "run_id": f"{approach}-mean"})
        emit({**base, **stdev, "run_id": f"{approach}-stdev"})
    return out.getvalue()
