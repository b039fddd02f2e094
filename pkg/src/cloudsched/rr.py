"""Round-robin baseline scheduler.

Each task is assigned in circular server order from a single global
cursor: the cursor server offers its earliest slot satisfying VM support,
per-minute capacity, and dependency readiness; if it has none, the
following servers are tried in circular order. The first slot found wins
and the cursor rotates to the next server. The soft deadline is *not* a
placement constraint: round-robin schedules blindly and any placement
that ends past its deadline is recorded as a soft-deadline violation.
A task is rejected only when no capacity-feasible slot exists at all.

Round-robin never turns servers off and learns nothing; pair its ledger
with ``always_on=True`` when computing energy.
"""

from __future__ import annotations

import numpy as np

from .domain import Job, PlatformConfig, topological_order, validate_job, validate_platform
from .platform import Admission, AllocationLedger, Decision, admission_check, earliest_start


def run_rr_baseline(jobs: list[Job], platform: PlatformConfig) -> AllocationLedger:
    """Schedule the workload with the circular first-fit baseline."""
    check = validate_platform(platform)
    if not check:
        raise ValueError(f"invalid platform: {check.error} ({check.detail})")
    for job in jobs:
        check = validate_job(job)
        if not check:
            raise ValueError(f"invalid job {job.job_id}: {check.error} ({check.detail})")

    ledger = AllocationLedger(platform)
    scan_order = sorted(platform.servers, key=lambda s: (s.cluster_id, s.id))
    n = len(scan_order)
    cursor_server = 0

    for job in sorted(jobs, key=lambda j: (j.arrival_minute, j.job_id)):
        if any(admission_check(platform, t) is Admission.REJECT_UNFULFILLABLE for t in job.tasks):
            for t in job.tasks:
                ledger.record_rejection(t, "admission_unfulfillable")
            continue
        rejected_parents: set[int] = set()
        for task in topological_order(job):
            if any(e.from_task in rejected_parents for e in job.predecessors(task.task_id)):
                rejected_parents.add(task.task_id)
                ledger.record_rejection(task, "dependency_rejected")
                continue

            placed = False
            for k in range(n):
                pos = (cursor_server + k) % n
                server = scan_order[pos]
                earliest = earliest_start(ledger, job, task, platform, server.id)
                starts = ledger.feasible_starts(server, task, earliest, None)
                hits = np.flatnonzero(starts)
                if hits.size == 0:
                    continue
                start = int(hits[0])
                end = start + task.duration_minutes - 1
                decision = Decision(server.cluster_id, server.id, start // 60, start, end)
                ledger.allocate(task, decision, ddl_event=end > task.deadline_minute)
                # Circular assignment: the next task starts at the next server.
                cursor_server = (pos + 1) % n
                placed = True
                break
            if not placed:
                rejected_parents.add(task.task_id)
                ledger.record_rejection(task, "no_slot", ddl_event=False)
    return ledger
