"""Per-minute resource state of the platform.

The ledger tracks every committed allocation minute-by-minute, enforces
aggregate CPU/MEM capacity and VM-type support on each server, and records
one outcome per task. Feasibility questions ("where can this task start?")
are answered from dense per-server minute arrays with a sliding-window
maximum, which keeps candidate scans cheap even for thousands of tasks.

Capacity comparisons use a small relative epsilon so that demands exactly
equal to the remaining capacity are accepted (the prerequisite is a
non-strict bound).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.ndimage import maximum_filter1d

from .domain import Job, PlatformConfig, Server, Task

CAP_EPS = 1e-9


class CapacityViolation(RuntimeError):
    """An allocate() call broke a capacity precondition (programming error)."""


class PredecessorUnscheduled(RuntimeError):
    """earliest_start() was asked about a task whose parent has no decision."""


class Admission(Enum):
    ACCEPT = "accept"
    REJECT_UNFULFILLABLE = "reject_unfulfillable"


class TaskStatus(Enum):
    SCHEDULED = "scheduled"
    REJECTED = "rejected"
    RECYCLED_THEN_SCHEDULED = "recycled_then_scheduled"
    RECYCLED_THEN_REJECTED = "recycled_then_rejected"


@dataclass(frozen=True)
class Decision:
    """A committed placement: cluster, server, hour, and minute interval."""

    cluster_id: int
    server_id: int
    hour: int
    start_minute: int
    end_minute: int


@dataclass
class TaskOutcome:
    """Final fate of one task plus its recycle history."""

    task: Task
    status: TaskStatus
    decision: Decision | None = None
    recycles: int = 0
    ddl_event: bool = False  # hit a deadline-bound recycle or rejection
    reject_reason: str | None = None


LEDGER_HEADER = "task_key,cluster_id,server_id,hour,start_minute,end_minute,status"


def _forward_window_max(x: np.ndarray, d: int) -> np.ndarray:
    """out[m] = max(x[m : m + d]); entries past len(x) - d are unspecified."""
    if d == 1:
        return x
    return maximum_filter1d(x, size=d, mode="nearest", origin=-(d // 2))


def admission_check(cfg: PlatformConfig, task: Task) -> Admission:
    """Reject only tasks no server could host even when completely empty."""
    need_types = task.vm_type_ids
    cpu, mem = task.total_cpu, task.total_mem
    for s in cfg.servers:
        if need_types <= s.supported_vm_types and cpu <= s.cpu_capacity + CAP_EPS * s.cpu_capacity \
                and mem <= s.mem_capacity + CAP_EPS * s.mem_capacity:
            return Admission.ACCEPT
    return Admission.REJECT_UNFULFILLABLE


class AllocationLedger:
    """Mutable allocation state for one simulation instance.

    Holds dense (server, minute) CPU/MEM sums for fast feasibility checks,
    per-(server, hour) CPU-minute totals for observation encoding, and the
    per-task outcome records everything downstream is computed from.
    """

    def __init__(self, platform: PlatformConfig):
        self.platform = platform
        n, t = platform.n_servers, platform.horizon_minutes
        self.server_index = {s.id: i for i, s in enumerate(platform.servers)}
        self.cpu = np.zeros((n, t))
        self.mem = np.zeros((n, t))
        self.cpu_hour = np.zeros((n, platform.horizon_hours))  # cpu-minutes per hour
        self.busy_minutes = np.zeros((n, platform.horizon_hours), dtype=int)
        self.outcomes: dict[str, TaskOutcome] = {}
        self._caps_cpu = np.array([s.cpu_capacity for s in platform.servers])
        self._caps_mem = np.array([s.mem_capacity for s in platform.servers])

    # -- queries ---------------------------------------------------------

    def utilization(self, server: Server, minute: int) -> float:
        """CPU allocated this minute divided by the server's capacity."""
        return float(self.cpu[self.server_index[server.id], minute] / server.cpu_capacity)

    def mean_utilization(self, server: Server) -> float:
        row = self.cpu[self.server_index[server.id]]
        return float(row.mean() / server.cpu_capacity)

    def can_host(self, server: Server, task: Task, start: int, end: int) -> bool:
        """Support-set membership plus per-minute capacity over [start, end]."""
        if not task.vm_type_ids <= server.supported_vm_types:
            return False
        if start < 0 or end >= self.platform.horizon_minutes or end < start:
            return False
        i = self.server_index[server.id]
        window_cpu = self.cpu[i, start : end + 1]
        window_mem = self.mem[i, start : end + 1]
        cpu_ok = window_cpu.max(initial=0.0) + task.total_cpu <= server.cpu_capacity * (1 + CAP_EPS)
        mem_ok = window_mem.max(initial=0.0) + task.total_mem <= server.mem_capacity * (1 + CAP_EPS)
        return bool(cpu_ok and mem_ok)

    def feasible_starts(
        self,
        server: Server,
        task: Task,
        earliest: int,
        deadline: int | None = None,
    ) -> np.ndarray:
        """Boolean vector over start minutes where the task fits entirely.

        A start m is feasible when the task's demands fit under capacity for
        every minute of [m, m+duration-1], m >= earliest, and the interval
        ends by the deadline (when given) and within the horizon.
        """
        t = self.platform.horizon_minutes
        d = task.duration_minutes
        out = np.zeros(t, dtype=bool)
        if not task.vm_type_ids <= server.supported_vm_types:
            return out
        last_start = t - d
        if deadline is not None:
            last_start = min(last_start, deadline - d + 1)
        if last_start < 0 or earliest > last_start:
            return out
        i = self.server_index[server.id]
        roll_cpu = _forward_window_max(self.cpu[i], d)
        roll_mem = _forward_window_max(self.mem[i], d)
        fits = (roll_cpu + task.total_cpu <= server.cpu_capacity * (1 + CAP_EPS)) & (
            roll_mem + task.total_mem <= server.mem_capacity * (1 + CAP_EPS)
        )
        out[earliest : last_start + 1] = fits[earliest : last_start + 1]
        return out

    # -- mutation --------------------------------------------------------

    def allocate(self, task: Task, decision: Decision, recycles: int = 0, ddl_event: bool = False) -> None:
        server = self.platform.server_by_id(decision.server_id)
        start, end = decision.start_minute, decision.end_minute
        if end - start + 1 != task.duration_minutes:
            raise CapacityViolation(f"{task.key}: interval does not match duration")
        if start // 60 != decision.hour:
            raise CapacityViolation(f"{task.key}: start {start} not in hour {decision.hour}")
        if not self.can_host(server, task, start, end):
            raise CapacityViolation(f"{task.key}: does not fit on server {server.id} at {start}")
        i = self.server_index[server.id]
        self.cpu[i, start : end + 1] += task.total_cpu
        self.mem[i, start : end + 1] += task.total_mem
        for h in range(start // 60, end // 60 + 1):
            lo = max(start, h * 60)
            hi = min(end, h * 60 + 59)
            self.cpu_hour[i, h] += task.total_cpu * (hi - lo + 1)
            self.busy_minutes[i, h] += hi - lo + 1
        status = TaskStatus.RECYCLED_THEN_SCHEDULED if recycles else TaskStatus.SCHEDULED
        self.outcomes[task.key] = TaskOutcome(task, status, decision, recycles, ddl_event)

    def deallocate(self, task: Task) -> None:
        outcome = self.outcomes.get(task.key)
        if outcome is None or outcome.decision is None:
            return
        d = outcome.decision
        i = self.server_index[d.server_id]
        start, end = d.start_minute, d.end_minute
        self.cpu[i, start : end + 1] -= task.total_cpu
        self.mem[i, start : end + 1] -= task.total_mem
        for h in range(start // 60, end // 60 + 1):
            lo = max(start, h * 60)
            hi = min(end, h * 60 + 59)
            self.cpu_hour[i, h] -= task.total_cpu * (hi - lo + 1)
            self.busy_minutes[i, h] -= hi - lo + 1
        outcome.decision = None

    def record_rejection(self, task: Task, reason: str, recycles: int = 0, ddl_event: bool = False) -> None:
        status = TaskStatus.RECYCLED_THEN_REJECTED if recycles else TaskStatus.REJECTED
        self.outcomes[task.key] = TaskOutcome(task, status, None, recycles, ddl_event, reason)

    # -- export / audit --------------------------------------------------

    def export_csv(self) -> str:
        lines = [LEDGER_HEADER]
        for key in sorted(self.outcomes):
            o = self.outcomes[key]
            if o.decision is not None:
                d = o.decision
                lines.append(
                    f"{key},{d.cluster_id},{d.server_id},{d.hour},{d.start_minute},{d.end_minute},{o.status.value}"
                )
            else:
                lines.append(f"{key},,,,,,{o.status.value}")
        return "\n".join(lines) + "\n"

    def scheduled_outcomes(self) -> list[TaskOutcome]:
        return [o for o in self.outcomes.values() if o.decision is not None]

    def audit(self, jobs: list[Job], check_deadlines: bool = True) -> list[str]:
        """Exhaustive post-run consistency scan, recomputed from decisions.

        Returns a list of violation descriptions (empty when clean):
        per-minute CPU/MEM capacity on every server, VM support membership,
        dependency soundness including transfer times, deadline compliance
        (skippable for deadline-blind schedulers), and the hour/duration
        shape of every decision.
        """
        problems: list[str] = []
        plat = self.platform
        cpu = np.zeros((plat.n_servers, plat.horizon_minutes))
        mem = np.zeros((plat.n_servers, plat.horizon_minutes))
        by_key: dict[str, TaskOutcome] = {k: o for k, o in self.outcomes.items()}
        for key, o in by_key.items():
            if o.decision is None:
                continue
            d, t = o.decision, o.task
            server = plat.server_by_id(d.server_id)
            if d.server_id not in plat.clusters.get(d.cluster_id, ()):
                problems.append(f"{key}: server {d.server_id} not in cluster {d.cluster_id}")
            if d.start_minute // 60 != d.hour:
                problems.append(f"{key}: start {d.start_minute} outside hour {d.hour}")
            if d.end_minute - d.start_minute + 1 != t.duration_minutes:
                problems.append(f"{key}: interval length != duration")
            if check_deadlines and d.end_minute > t.deadline_minute:
                problems.append(f"{key}: ends {d.end_minute} past deadline {t.deadline_minute}")
            if d.start_minute < t.arrival_minute:
                problems.append(f"{key}: starts before arrival")
            if not t.vm_type_ids <= server.supported_vm_types:
                problems.append(f"{key}: vm types {sorted(t.vm_type_ids)} unsupported on server {server.id}")
            i = self.server_index[d.server_id]
            cpu[i, d.start_minute : d.end_minute + 1] += t.total_cpu
            mem[i, d.start_minute : d.end_minute + 1] += t.total_mem
        for i, s in enumerate(plat.servers):
            if (cpu[i] > s.cpu_capacity * (1 + 10 * CAP_EPS)).any():
                worst = int(np.argmax(cpu[i]))
                problems.append(f"server {s.id}: cpu over capacity at minute {worst} ({cpu[i, worst]})")
            if (mem[i] > s.mem_capacity * (1 + 10 * CAP_EPS)).any():
                worst = int(np.argmax(mem[i]))
                problems.append(f"server {s.id}: mem over capacity at minute {worst} ({mem[i, worst]})")
        for job in jobs:
            for e in job.edges:
                k_from, k_to = f"{job.job_id}:{e.from_task}", f"{job.job_id}:{e.to_task}"
                o_from, o_to = by_key.get(k_from), by_key.get(k_to)
                if not o_from or not o_to or o_from.decision is None or o_to.decision is None:
                    continue
                ready = transfer_ready_minute(plat, o_from.decision, o_to.decision.server_id, e.data_units)
                if o_to.decision.start_minute < ready:
                    problems.append(f"{k_to}: starts {o_to.decision.start_minute} before data ready {ready}")
        return problems


def transfer_ready_minute(plat: PlatformConfig, pred: Decision, server_id: int, data_units: float) -> int:
    """First minute a dependent may start on `server_id` given one parent."""
    if pred.server_id == server_id or data_units <= 0:
        return pred.end_minute + 1
    rate = plat.bandwidth(pred.server_id, server_id)
    return pred.end_minute + 1 + math.ceil(data_units / rate)


def earliest_start(
    ledger: AllocationLedger,
    job: Job,
    task: Task,
    cfg: PlatformConfig,
    candidate_server_id: int,
) -> int:
    """Arrival-constrained earliest start on a candidate server, counting
    each parent's completion plus its cross-server data transfer time."""
    start = task.arrival_minute
    for e in job.predecessors(task.task_id):
        key = f"{job.job_id}:{e.from_task}"
        outcome = ledger.outcomes.get(key)
        if outcome is None or outcome.decision is None:
            raise PredecessorUnscheduled(f"{task.key}: predecessor {key} has no decision")
        start = max(start, transfer_ready_minute(cfg, outcome.decision, candidate_server_id, e.data_units))
    return start
