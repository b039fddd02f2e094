"""Power, energy, and dynamic electricity pricing.

A server's draw is a constant static term plus a utilization-dependent
dynamic term that grows linearly up to the server's optimal utilization
point and quadratically past it. Servers that host zero task-minutes in a
given hour are powered off for that whole hour and draw nothing, unless
the scheduling policy keeps them always on (the round-robin baseline).

The unit price combines a time-of-use rate by hour of day with a real-time
component proportional to the concurrent platform power draw. Costs are
integrated minute by minute on the discrete grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import PlatformConfig, PowerParams, Server
from .platform import AllocationLedger

# Currency per kWh by hour of day: off-peak nights, a daytime shoulder,
# and an evening peak. Purely a configurable default.
DEFAULT_TOUP = tuple([0.10] * 8 + [0.20] * 9 + [0.40] * 5 + [0.20] * 2)

WATTS_PER_KW = 1000.0
MINUTE_HOURS = 1.0 / 60.0


@dataclass(frozen=True)
class EnergyPricingConfig:
    """Time-of-use rates (24 entries, currency/kWh) plus an RTP slope in
    currency per kWh per kW of concurrent total power."""

    tou_rates: tuple[float, ...] = DEFAULT_TOUP
    rtp_slope: float = 0.001

    def __post_init__(self):
        if len(self.tou_rates) != 24:
            raise ValueError(f"need 24 TOU rates, got {len(self.tou_rates)}")
        if any(r < 0 for r in self.tou_rates) or self.rtp_slope < 0:
            raise ValueError("rates must be non-negative")


@dataclass(frozen=True)
class EnergyReport:
    """Totals plus per-hour breakdown of energy and cost for one run."""

    total_energy_kwh: float
    total_cost: float
    total_cpu_processed: float
    per_hour: tuple[dict, ...]

    def to_json_dict(self) -> dict:
        return {
            "total_energy_kwh": self.total_energy_kwh,
            "total_cost": self.total_cost,
            "total_cpu_processed": self.total_cpu_processed,
            "per_hour": list(self.per_hour),
        }


def dynamic_power(ur: float, params: PowerParams | tuple) -> float:
    """Utilization-dependent wattage: linear below the optimal point,
    quadratic penalty above it (continuous at the junction)."""
    if isinstance(params, PowerParams):
        a, b, ur_opt = params.a, params.b, params.ur_opt
    else:
        a, b, ur_opt = params
    if ur < ur_opt:
        return ur * a
    return ur_opt * a + (ur - ur_opt) ** 2 * b


def total_power(
    ledger: AllocationLedger,
    server: Server,
    minute: int,
    always_on: bool = False,
) -> float:
    """Total wattage of one server at one minute, honoring the per-hour
    turn-off rule unless the policy keeps servers always on."""
    i = ledger.server_index[server.id]
    hour = minute // 60
    if not always_on and ledger.busy_minutes[i, hour] == 0:
        return 0.0
    ur = float(ledger.cpu[i, minute]) / server.cpu_capacity
    return server.power_params.static_watts + dynamic_power(ur, server.power_params)


def unit_price(pricing: EnergyPricingConfig, hour_of_day: int, platform_power_kw: float) -> float:
    """Currency per kWh at this hour given the concurrent platform draw."""
    if platform_power_kw < 0:
        raise ValueError(f"power must be non-negative, got {platform_power_kw}")
    return pricing.tou_rates[hour_of_day % 24] + pricing.rtp_slope * platform_power_kw


def _power_matrix(ledger: AllocationLedger, platform: PlatformConfig, always_on: bool) -> np.ndarray:
    """Wattage of every server at every minute, shape (n_servers, minutes)."""
    n, t = platform.n_servers, platform.horizon_minutes
    watts = np.zeros((n, t))
    for i, s in enumerate(platform.servers):
        p = s.power_params
        ur = ledger.cpu[i] / s.cpu_capacity
        dyn = np.where(ur < p.ur_opt, ur * p.a, p.ur_opt * p.a + (ur - p.ur_opt) ** 2 * p.b)
        row = p.static_watts + dyn
        if not always_on:
            on = np.repeat(ledger.busy_minutes[i] > 0, 60)
            row = np.where(on, row, 0.0)
        watts[i] = row
    return watts


def energy_and_cost(
    ledger: AllocationLedger,
    platform: PlatformConfig,
    pricing: EnergyPricingConfig,
    always_on: bool = False,
) -> EnergyReport:
    """Integrate platform energy and its price over the whole horizon.

    Each minute contributes (platform watts)/1000 * 1/60 kWh of energy,
    billed at the unit price for that minute's hour of day evaluated at the
    concurrent platform draw. CPU processed counts executed demand:
    cpu units x duration in hours, summed over scheduled tasks.
    """
    watts = _power_matrix(ledger, platform, always_on).sum(axis=0)
    kw = watts / WATTS_PER_KW
    energy_per_minute = kw * MINUTE_HOURS
    hours_of_day = (np.arange(platform.horizon_minutes) // 60) % 24
    rates = np.array(pricing.tou_rates)[hours_of_day] + pricing.rtp_slope * kw
    cost_per_minute = rates * energy_per_minute

    per_hour = []
    for h in range(platform.horizon_hours):
        sl = slice(h * 60, (h + 1) * 60)
        per_hour.append(
            {
                "hour": h,
                "energy_kwh": float(energy_per_minute[sl].sum()),
                "cost": float(cost_per_minute[sl].sum()),
            }
        )
    total_cpu = 0.0
    for o in ledger.scheduled_outcomes():
        total_cpu += o.task.total_cpu * o.task.duration_minutes * MINUTE_HOURS
    return EnergyReport(
        total_energy_kwh=float(sum(h["energy_kwh"] for h in per_hour)),
        total_cost=float(sum(h["cost"] for h in per_hour)),
        total_cpu_processed=total_cpu,
        per_hour=tuple(per_hour),
    )
