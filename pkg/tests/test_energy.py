import json

import numpy as np
import pytest

from cloudsched.energy import (
    EnergyPricingConfig,
    dynamic_power,
    energy_and_cost,
    total_power,
    unit_price,
)
from cloudsched.platform import AllocationLedger, Decision

from conftest import make_platform, make_task

FLAT = EnergyPricingConfig(tou_rates=(0.25,) * 24, rtp_slope=0.0)


def test_dynamic_power_linear_branch():
    assert dynamic_power(0.5, (100.0, 200.0, 0.7)) == pytest.approx(50.0)


def test_dynamic_power_quadratic_branch():
    assert dynamic_power(0.9, (100.0, 200.0, 0.7)) == pytest.approx(78.0)


def test_dynamic_power_zero():
    assert dynamic_power(0.0, (100.0, 200.0, 0.7)) == 0.0


def test_dynamic_power_continuous_and_monotone():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = float(rng.uniform(10, 300)), float(rng.uniform(10, 500))
        opt = float(rng.uniform(0.1, 0.9))
        params = (a, b, opt)
        eps = 1e-9
        left = dynamic_power(opt - eps, params)
        right = dynamic_power(opt, params)
        assert right == pytest.approx(opt * a, abs=1e-6)
        assert abs(left - right) < 1e-6
        grid = np.linspace(0, 1, 201)
        values = [dynamic_power(u, params) for u in grid]
        assert all(v2 >= v1 - 1e-12 for v1, v2 in zip(values, values[1:]))


def test_total_power_off_rule():
    plat = make_platform()
    ledger = AllocationLedger(plat)
    server = plat.servers[0]
    # busy in hour 0 only
    ledger.allocate(make_task(cpu=2.0, duration=10), Decision(0, 0, 0, 5, 14))
    assert total_power(ledger, server, 70) == 0.0  # hour 1: off
    assert total_power(ledger, server, 0) == pytest.approx(100.0)  # idle minute in a busy hour
    busy = total_power(ledger, server, 7)
    assert busy == pytest.approx(100.0 + dynamic_power(0.5, server.power_params))
    assert total_power(ledger, server, 70, always_on=True) == pytest.approx(100.0)


def test_unit_price_rates():
    rates = list(FLAT.tou_rates)
    rates[3] = 0.10
    rates[18] = 0.20
    pricing = EnergyPricingConfig(tou_rates=tuple(rates), rtp_slope=0.0)
    assert unit_price(pricing, 3, 0.0) == pytest.approx(0.10)
    pricing_rtp = EnergyPricingConfig(tou_rates=tuple(rates), rtp_slope=0.001)
    assert unit_price(pricing_rtp, 18, 100.0) == pytest.approx(0.30)
    with pytest.raises(ValueError):
        unit_price(pricing, 5, -1.0)


def test_energy_empty_ledger():
    plat = make_platform()
    report = energy_and_cost(AllocationLedger(plat), plat, FLAT)
    assert report.total_energy_kwh == 0.0
    assert report.total_cost == 0.0


def test_energy_closed_form_constant_hour():
    # one server, full busy hour at constant utilization, flat rate r:
    # energy = watts/1000 kWh, cost = r * energy
    plat = make_platform(cpu=4.0, horizon_hours=1)
    ledger = AllocationLedger(plat)
    ledger.allocate(make_task(cpu=2.0, duration=60, deadline=60), Decision(0, 0, 0, 0, 59))
    watts = 100.0 + dynamic_power(0.5, plat.servers[0].power_params)
    report = energy_and_cost(ledger, plat, FLAT)
    assert report.total_energy_kwh == pytest.approx(watts / 1000.0, rel=1e-12)
    assert report.total_cost == pytest.approx(0.25 * watts / 1000.0, rel=1e-12)


def _bruteforce_energy(ledger, plat, pricing, always_on=False):
    """Independent per-minute recomputation straight from the decisions."""
    decisions = [(o.task, o.decision) for o in ledger.outcomes.values() if o.decision is not None]
    total_energy = 0.0
    total_cost = 0.0
    for minute in range(plat.horizon_minutes):
        platform_watts = 0.0
        for s in plat.servers:
            used = sum(
                t.total_cpu for t, d in decisions if d.server_id == s.id and d.start_minute <= minute <= d.end_minute
            )
            hour = minute // 60
            busy_hour = any(
                d.server_id == s.id and not (d.end_minute < hour * 60 or d.start_minute > hour * 60 + 59)
                for _, d in decisions
            )
            if not busy_hour and not always_on:
                continue
            ur = used / s.cpu_capacity
            p = s.power_params
            dyn = ur * p.a if ur < p.ur_opt else p.ur_opt * p.a + (ur - p.ur_opt) ** 2 * p.b
            platform_watts += p.static_watts + dyn
        kwh = platform_watts / 1000.0 / 60.0
        rate = pricing.tou_rates[(minute // 60) % 24] + pricing.rtp_slope * platform_watts / 1000.0
        total_energy += kwh
        total_cost += rate * kwh
    return total_energy, total_cost


def _five_task_ledger(plat):
    ledger = AllocationLedger(plat)
    specs = [
        ("a", 0, 1.0, 1.5, 0, 40),
        ("b", 0, 2.0, 0.5, 30, 45),
        ("c", 1, 3.0, 1.0, 10, 80),
        ("d", 1, 0.5, 2.0, 81, 119),
        ("e", 0, 1.5, 1.0, 65, 100),
    ]
    for name, server, cpu, mem, start, end in specs:
        t = make_task(job_id=name, cpu=cpu, mem=mem, duration=end - start + 1, deadline=120)
        ledger.allocate(t, Decision(plat.servers[server].cluster_id, server, start // 60, start, end))
    return ledger


def test_energy_matches_bruteforce_oracle():
    plat = make_platform(n_servers=2, cpu=4.0, horizon_hours=2)
    pricing = EnergyPricingConfig(tou_rates=tuple([0.1, 0.4] + [0.2] * 22), rtp_slope=0.003)
    ledger = _five_task_ledger(plat)
    for always_on in (False, True):
        report = energy_and_cost(ledger, plat, pricing, always_on=always_on)
        energy, cost = _bruteforce_energy(ledger, plat, pricing, always_on=always_on)
        assert report.total_energy_kwh == pytest.approx(energy, rel=1e-9)
        assert report.total_cost == pytest.approx(cost, rel=1e-9)


def test_energy_additive_over_partitions():
    plat = make_platform(n_servers=2, cpu=4.0, horizon_hours=2)
    ledger = _five_task_ledger(plat)
    full = energy_and_cost(ledger, plat, FLAT)
    # split by server: zero out one server's tasks at a time
    parts = []
    for keep in (0, 1):
        part = AllocationLedger(plat)
        for o in ledger.outcomes.values():
            if o.decision is not None and o.decision.server_id == keep:
                part.allocate(o.task, o.decision)
        parts.append(energy_and_cost(part, plat, FLAT))
    assert full.total_energy_kwh == pytest.approx(sum(p.total_energy_kwh for p in parts), rel=1e-9)
    assert full.total_cost == pytest.approx(sum(p.total_cost for p in parts), rel=1e-9)
    # split by time: per-hour entries sum to the totals
    assert full.total_energy_kwh == pytest.approx(sum(h["energy_kwh"] for h in full.per_hour), rel=1e-9)
    assert full.total_cost == pytest.approx(sum(h["cost"] for h in full.per_hour), rel=1e-9)


def test_flat_rate_identity():
    plat = make_platform(n_servers=2, cpu=4.0, horizon_hours=2)
    ledger = _five_task_ledger(plat)
    report = energy_and_cost(ledger, plat, FLAT)
    assert report.total_cost == pytest.approx(0.25 * report.total_energy_kwh, rel=1e-12)


def test_cheaper_hour_shift_never_costs_more():
    # both hours stay occupied by a background task, so moving one task from
    # the expensive hour to the cheap hour shifts only its dynamic energy
    plat = make_platform(n_servers=1, cpu=4.0, horizon_hours=2)
    pricing = EnergyPricingConfig(tou_rates=tuple([0.4, 0.1] + [0.2] * 22), rtp_slope=0.0)

    def cost_with_start(start):
        ledger = AllocationLedger(plat)
        ledger.allocate(make_task(job_id="bg", cpu=0.5, duration=120, deadline=120), Decision(0, 0, 0, 0, 119))
        mover = make_task(job_id="m", cpu=1.0, duration=30, deadline=120)
        ledger.allocate(mover, Decision(0, 0, start // 60, start, start + 29))
        return energy_and_cost(ledger, plat, pricing).total_cost

    assert cost_with_start(70) <= cost_with_start(10)


def test_total_cpu_processed_counts_executed_demand():
    plat = make_platform(cpu=4.0, horizon_hours=1)
    ledger = AllocationLedger(plat)
    ledger.allocate(make_task(cpu=2.0, duration=30, deadline=60), Decision(0, 0, 0, 0, 29))
    ledger.record_rejection(make_task(job_id="r", cpu=9.0), "no_slot")
    report = energy_and_cost(ledger, plat, FLAT)
    assert report.total_cpu_processed == pytest.approx(2.0 * 30 / 60)


def test_report_json_field_names():
    plat = make_platform(horizon_hours=1)
    report = energy_and_cost(AllocationLedger(plat), plat, FLAT)
    data = json.loads(json.dumps(report.to_json_dict()))
    assert set(data) == {"total_energy_kwh", "total_cost", "total_cpu_processed", "per_hour"}
    assert len(data["per_hour"]) == 1
    assert set(data["per_hour"][0]) == {"hour", "energy_kwh", "cost"}
