import numpy as np
import pytest

from cloudsched.energy import EnergyPricingConfig, EnergyReport, energy_and_cost
from cloudsched.hierarchy import run_online
from cloudsched.metrics import (
    COMPARISON_HEADER,
    Indicators,
    compute_indicators,
    comparison_rows_to_csv,
    config_digest,
    indicators_report,
)
from cloudsched.platform import AllocationLedger, Decision
from cloudsched.workload import ScenarioConfig, generate_workload

from conftest import make_platform, make_task

FLAT = EnergyPricingConfig(tou_rates=(0.2,) * 24, rtp_slope=0.0)


def fake_energy(cpu=100.0, cost=40.0, energy=50.0):
    return EnergyReport(total_energy_kwh=energy, total_cost=cost, total_cpu_processed=cpu, per_hour=())


def test_ece_definition():
    plat = make_platform(horizon_hours=1)
    ledger = AllocationLedger(plat)
    ind, flags = compute_indicators(ledger, fake_energy(cpu=100.0, cost=40.0))
    assert ind.ece == pytest.approx(2.5)
    assert ind.ee == pytest.approx(2.0)


def test_ece_ee_identity():
    plat = make_platform(horizon_hours=1)
    ledger = AllocationLedger(plat)
    ind, _ = compute_indicators(ledger, fake_energy(cpu=123.4, cost=77.7, energy=31.3))
    assert ind.ece == pytest.approx(ind.ee * 31.3 / 77.7, rel=1e-9)


def test_ddl_vr_counts_tasks_once():
    plat = make_platform(horizon_hours=1)
    ledger = AllocationLedger(plat)
    for i in range(10):
        t = make_task(job_id=f"j{i}", cpu=0.2, mem=0.2, duration=5, deadline=59)
        if i < 2:
            ledger.allocate(t, Decision(0, 0, 0, 0, 4), recycles=3, ddl_event=True)
        else:
            ledger.allocate(t, Decision(0, 0, 0, 10, 14))
    ind, _ = compute_indicators(ledger, fake_energy())
    assert ind.ddl_vr == pytest.approx(0.2)


def test_tfr_counting():
    plat = make_platform(n_servers=1, horizon_hours=2)
    ledger = AllocationLedger(plat)
    ledger.allocate(make_task(duration=10, deadline=119), Decision(0, 0, 0, 0, 9))
    ind, _ = compute_indicators(ledger, fake_energy())
    assert ind.tfr == pytest.approx(0.5)
    ind_on, _ = compute_indicators(ledger, fake_energy(), servers_always_on=True)
    assert ind_on.tfr == 0.0


def test_uor_band():
    plat = make_platform(n_servers=1, cpu=1.0, horizon_hours=2)
    ledger = AllocationLedger(plat)
    # hour 0 mean utilization 0.7 (in band), hour 1 busy at 0.1 (working, off-band)
    ledger.allocate(make_task(job_id="a", cpu=0.7, duration=60, deadline=200), Decision(0, 0, 0, 0, 59))
    ledger.allocate(make_task(job_id="b", cpu=0.1, duration=60, deadline=200), Decision(0, 0, 1, 60, 119))
    ind, _ = compute_indicators(ledger, fake_energy())
    assert ind.uor == pytest.approx(0.5)


def test_reward_rate_window():
    plat = make_platform(horizon_hours=1)
    ledger = AllocationLedger(plat)
    # starts at minute 10 with priority 11 -> inside [10, 12]; priority 30 -> outside
    ledger.allocate(make_task(job_id="a", priority=11, duration=5, deadline=59), Decision(0, 0, 0, 10, 14))
    ledger.allocate(make_task(job_id="b", priority=30, duration=5, deadline=59), Decision(0, 0, 0, 10, 14))
    ind, _ = compute_indicators(ledger, fake_energy())
    assert ind.reward_rate == pytest.approx(0.5)


def test_rejection_rate_and_admitted_denominator():
    plat = make_platform(horizon_hours=1)
    ledger = AllocationLedger(plat)
    ledger.allocate(make_task(job_id="ok", duration=5, deadline=59), Decision(0, 0, 0, 0, 4))
    ledger.record_rejection(make_task(job_id="adm"), "admission_unfulfillable")
    ledger.record_rejection(make_task(job_id="late"), "no_slot", ddl_event=True)
    ind, _ = compute_indicators(ledger, fake_energy())
    assert ind.rejection_rate == pytest.approx(2 / 3)
    # admission-rejected tasks are excluded from the ddl denominator
    assert ind.ddl_vr == pytest.approx(1 / 2)


def test_zero_denominator_flags():
    plat = make_platform(horizon_hours=1)
    ledger = AllocationLedger(plat)
    ind, flags = compute_indicators(ledger, fake_energy(cpu=0.0, cost=0.0, energy=0.0))
    assert ind.ece == 0.0 and ind.ee == 0.0
    assert "zero_denominator:ece" in flags and "zero_denominator:ee" in flags
    assert all(0.0 <= v <= 1.0 for v in (ind.tfr, ind.uor, ind.ddl_vr, ind.reward_rate, ind.rejection_rate))


def test_indicators_report_shape_and_digest_stability():
    ind = Indicators(1, 2, 0.1, 0.2, 0.0, 0.3, 0.0)
    digest = config_digest({"a": 1, "b": [1, 2]})
    assert digest == config_digest({"b": [1, 2], "a": 1})
    report = indicators_report(ind, ["flag"], digest)
    assert set(report) == {"indicators", "flags", "config_digest"}
    assert set(report["indicators"]) == {"ece", "ee", "tfr", "uor", "ddl_vr", "reward_rate", "rejection_rate"}


def test_indicators_recomputable_from_exports():
    # everything except the recycle-cause flag is derivable from the ledger
    # CSV, the energy report, and the workload
    plat = make_platform(n_servers=4, n_clusters=2, cpu=1.0, mem=1.0, horizon_hours=6)
    cfg = ScenarioConfig(
        target_task_count=60, target_total_cpu=9.0, target_cpu_variance=0.01,
        target_mem_variance=0.005, span_minutes=120, job_size_range=(1, 3),
        edge_probability=0.2, deadline_slack_range=(30, 200), duration_range=(10, 30),
        priority_range=(0, 59), vm_type_ids=(0, 1),
    )
    jobs = generate_workload(cfg, 3)
    from cloudsched.hierarchy import SchedulerConfig
    ledger, _ = run_online(jobs, plat, SchedulerConfig(), FLAT, seed=2)
    energy = energy_and_cost(ledger, plat, FLAT)
    ind, _ = compute_indicators(ledger, energy)

    # independent recomputation from the CSV text
    tasks = {t.key: t for j in jobs for t in j.tasks}
    lines = ledger.export_csv().strip().split("\n")[1:]
    scheduled = []
    total = len(lines)
    rejected = 0
    busy = np.zeros((plat.n_servers, plat.horizon_hours), dtype=bool)
    hour_cpu = np.zeros((plat.n_servers, plat.horizon_hours))
    for line in lines:
        key, cluster, server, hour, start, end, status = line.split(",")
        if status in ("rejected", "recycled_then_rejected"):
            rejected += 1
            continue
        start, end, server = int(start), int(end), int(server)
        scheduled.append((key, start))
        t = tasks[key]
        for h in range(start // 60, end // 60 + 1):
            lo, hi = max(start, h * 60), min(end, h * 60 + 59)
            busy[server, h] = True
            hour_cpu[server, h] += t.total_cpu * (hi - lo + 1)
    tfr = float((~busy).sum()) / busy.size
    working = int(busy.sum())
    in_band = sum(
        1
        for i in range(plat.n_servers)
        for h in range(plat.horizon_hours)
        if busy[i, h] and 0.60 <= hour_cpu[i, h] / (plat.servers[i].cpu_capacity * 60) <= 0.80
    )
    reward_hits = sum(1 for key, start in scheduled if tasks[key].priority - 1 <= start % 60 <= tasks[key].priority + 1)
    assert ind.tfr == pytest.approx(tfr)
    assert ind.uor == pytest.approx(in_band / working if working else 0.0)
    assert ind.reward_rate == pytest.approx(reward_hits / len(scheduled))
    assert ind.rejection_rate == pytest.approx(rejected / total)
    assert ind.ece == pytest.approx(energy.total_cpu_processed / energy.total_cost)


def test_reward_rate_matches_trace_multipliers():
    plat = make_platform(n_servers=4, n_clusters=2, cpu=1.0, mem=1.0, horizon_hours=6)
    cfg = ScenarioConfig(
        target_task_count=50, target_total_cpu=6.0, target_cpu_variance=0.005,
        target_mem_variance=0.002, span_minutes=100, job_size_range=(1, 2),
        edge_probability=0.2, deadline_slack_range=(60, 250), duration_range=(10, 25),
        priority_range=(0, 59), vm_type_ids=(0,),
    )
    jobs = generate_workload(cfg, 8)
    from cloudsched.hierarchy import SchedulerConfig
    ledger, trace = run_online(jobs, plat, SchedulerConfig(), FLAT, seed=3)
    # precondition: no rollbacks, so every boosted layer-4 step is a
    # scheduled task (multiplied rewards are distinguishable by value)
    assert not any(o.reject_reason == "job_cascade" for o in ledger.outcomes.values())
    boosted = {-5.0, -2.5, 2.5, 5.0}
    boosted_steps = sum(1 for r in trace if r.layer == 4 and r.reward in boosted)
    scheduled = ledger.scheduled_outcomes()
    ind, _ = compute_indicators(ledger, energy_and_cost(ledger, plat, FLAT))
    assert ind.reward_rate == pytest.approx(boosted_steps / len(scheduled))


def test_comparison_csv_rows_and_aggregates():
    rows = [
        dict(run_id="run_a_1", approach="h2o", scale="desk", scenario="medium", seed=1,
             ece=2.0, ee=1.0, tfr=0.5, uor=0.2, ddl_vr=0.0, reward_rate=0.1, rejection_rate=0.0),
        dict(run_id="run_a_2", approach="h2o", scale="desk", scenario="medium", seed=2,
             ece=4.0, ee=2.0, tfr=0.7, uor=0.4, ddl_vr=0.02, reward_rate=0.3, rejection_rate=0.01),
        dict(run_id="run_b_1", approach="rr", scale="desk", scenario="medium", seed=1,
             ece=1.0, ee=0.5, tfr=0.0, uor=0.1, ddl_vr=0.08, reward_rate=0.1, rejection_rate=0.0),
    ]
    text = comparison_rows_to_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == COMPARISON_HEADER
    assert len(lines) == 1 + 3 + 4  # rows + mean/stdev per approach
    mean_row = next(l for l in lines if l.startswith("h2o-mean"))
    cells = mean_row.split(",")
    assert float(cells[5]) == pytest.approx(3.0)  # mean ece
    stdev_row = next(l for l in lines if l.startswith("h2o-stdev"))
    assert float(stdev_row.split(",")[5]) == pytest.approx(1.0)
