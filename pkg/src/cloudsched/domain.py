"""Core value types shared by every module: VM types, tasks, DAG jobs,
servers, platform layout, and structural validation of jobs/platforms.

All times are absolute simulation minutes; an hour is minute // 60.
Instances are treated as immutable after construction and validation is
pure, so everything here is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class VmType:
    """A virtual machine flavor with its CPU/memory footprint."""

    id: int
    cpu_units: float
    mem_units: float


@dataclass(frozen=True)
class VmRequest:
    """One (vm_type, cpu, mem) demand triple of a task."""

    vm_type_id: int
    cpu_units: float
    mem_units: float


@dataclass(frozen=True)
class Task:
    """A schedulable unit: demands, priority, arrival and soft deadline.

    duration_minutes is the contiguous run length; the task occupies its
    demands on one server for every minute of [start, start+duration-1].
    """

    job_id: str
    task_id: int
    vm_requests: tuple[VmRequest, ...]
    priority: int
    arrival_minute: int
    duration_minutes: int
    deadline_minute: int

    @property
    def total_cpu(self) -> float:
        return sum(r.cpu_units for r in self.vm_requests)

    @property
    def total_mem(self) -> float:
        return sum(r.mem_units for r in self.vm_requests)

    @property
    def vm_type_ids(self) -> frozenset[int]:
        return frozenset(r.vm_type_id for r in self.vm_requests)

    @property
    def key(self) -> str:
        return f"{self.job_id}:{self.task_id}"


@dataclass(frozen=True)
class Edge:
    """Directed dependency: `data_units` must flow from one task to the next."""

    from_task: int
    to_task: int
    data_units: float


@dataclass(frozen=True)
class Job:
    """A user request: a DAG of tasks connected by data-transfer edges."""

    job_id: str
    tasks: tuple[Task, ...]
    edges: tuple[Edge, ...] = ()

    def task_by_id(self, task_id: int) -> Task:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(f"job {self.job_id} has no task {task_id}")

    def predecessors(self, task_id: int) -> list[Edge]:
        return [e for e in self.edges if e.to_task == task_id]

    @property
    def arrival_minute(self) -> int:
        return min(t.arrival_minute for t in self.tasks)


@dataclass(frozen=True)
class PowerParams:
    """Per-server power curve: static draw plus a piecewise dynamic term."""

    static_watts: float
    a: float
    b: float
    ur_opt: float


@dataclass(frozen=True)
class Server:
    """A physical server: capacities, supported VM flavors, power curve."""

    id: int
    cluster_id: int
    cpu_capacity: float
    mem_capacity: float
    supported_vm_types: frozenset[int]
    power_params: PowerParams


@dataclass
class PlatformConfig:
    """Cluster layout, per-pair bandwidth, and the scheduling horizon.

    `bandwidth_overrides` maps unordered server-id pairs to data units per
    minute; any pair not listed falls back to `bandwidth_default`.
    """

    servers: tuple[Server, ...]
    clusters: dict[int, tuple[int, ...]]
    vm_types: tuple[VmType, ...]
    bandwidth_default: float = 1000.0
    bandwidth_overrides: dict[tuple[int, int], float] = field(default_factory=dict)
    horizon_hours: int = 24
    minutes_per_hour: int = 60

    @property
    def horizon_minutes(self) -> int:
        return self.horizon_hours * self.minutes_per_hour

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def cluster_ids(self) -> list[int]:
        return sorted(self.clusters)

    def server_by_id(self, server_id: int) -> Server:
        for s in self.servers:
            if s.id == server_id:
                return s
        raise KeyError(f"no server {server_id}")

    def bandwidth(self, server_i: int, server_j: int) -> float:
        if server_i == server_j:
            return float("inf")
        key = (min(server_i, server_j), max(server_i, server_j))
        return self.bandwidth_overrides.get(key, self.bandwidth_default)


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of a structural check: ok, or the first violated invariant."""

    ok: bool
    error: str | None = None
    detail: str | None = None

    def __bool__(self) -> bool:
        return self.ok

    @staticmethod
    def valid() -> "ValidationResult":
        return ValidationResult(True)

    @staticmethod
    def invalid(error: str, detail: str) -> "ValidationResult":
        return ValidationResult(False, error, detail)


OK = ValidationResult.valid()


def _has_cycle(task_ids: list[int], edges: tuple[Edge, ...]) -> bool:
    """Kahn topological sort; leftover nodes mean a cycle."""
    indeg = {t: 0 for t in task_ids}
    succ: dict[int, list[int]] = {t: [] for t in task_ids}
    for e in edges:
        succ[e.from_task].append(e.to_task)
        indeg[e.to_task] += 1
    ready = [t for t in task_ids if indeg[t] == 0]
    seen = 0
    while ready:
        node = ready.pop()
        seen += 1
        for nxt in succ[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    return seen != len(task_ids)


def validate_job(job: Job) -> ValidationResult:
    """Check one job against every task and DAG invariant.

    Returns OK, or the first violation found in a fixed order: per-task
    field checks first, then edge referential checks, then acyclicity.
    """
    task_ids = [t.task_id for t in job.tasks]
    if len(set(task_ids)) != len(task_ids):
        return ValidationResult.invalid("DuplicateTaskId", f"job {job.job_id}")
    for t in job.tasks:
        if not t.vm_requests:
            return ValidationResult.invalid("EmptyVmRequest", t.key)
        for r in t.vm_requests:
            if r.cpu_units < 0 or r.mem_units < 0:
                return ValidationResult.invalid("NegativeDemand", t.key)
        if t.duration_minutes < 1:
            return ValidationResult.invalid("InvalidDuration", t.key)
        if t.arrival_minute < 0 or t.deadline_minute < t.arrival_minute:
            return ValidationResult.invalid("DeadlineBeforeArrival", t.key)
    id_set = set(task_ids)
    for e in job.edges:
        if e.from_task not in id_set or e.to_task not in id_set:
            return ValidationResult.invalid(
                "DanglingEdge", f"{job.job_id}: {e.from_task}->{e.to_task}"
            )
        if e.from_task == e.to_task:
            return ValidationResult.invalid(
                "CycleDetected", f"{job.job_id}: self-edge on {e.from_task}"
            )
        if e.data_units < 0:
            return ValidationResult.invalid(
                "NegativeDemand", f"{job.job_id}: edge {e.from_task}->{e.to_task}"
            )
    if _has_cycle(task_ids, job.edges):
        return ValidationResult.invalid("CycleDetected", job.job_id)
    return OK


def validate_platform(cfg: PlatformConfig) -> ValidationResult:
    """Check cluster partitioning, capacities, and power parameters."""
    vm_ids = [v.id for v in cfg.vm_types]
    if len(set(vm_ids)) != len(vm_ids):
        return ValidationResult.invalid("DuplicateVmType", str(vm_ids))
    for v in cfg.vm_types:
        if v.cpu_units < 0 or v.mem_units < 0:
            return ValidationResult.invalid("NegativeDemand", f"vm type {v.id}")
    membership: dict[int, int] = {}
    for cluster_id, members in cfg.clusters.items():
        for sid in members:
            if sid in membership:
                return ValidationResult.invalid(
                    "MultiClusterServer", f"server {sid} in clusters {membership[sid]} and {cluster_id}"
                )
            membership[sid] = cluster_id
    vm_id_set = set(vm_ids)
    for s in cfg.servers:
        if s.id not in membership:
            return ValidationResult.invalid("OrphanServer", f"server {s.id}")
        if membership[s.id] != s.cluster_id:
            return ValidationResult.invalid(
                "ClusterMismatch", f"server {s.id}: field says {s.cluster_id}, layout says {membership[s.id]}"
            )
        if s.cpu_capacity <= 0 or s.mem_capacity <= 0:
            return ValidationResult.invalid("NonPositiveCapacity", f"server {s.id}")
        if not s.supported_vm_types:
            return ValidationResult.invalid("EmptySupportSet", f"server {s.id}")
        if not s.supported_vm_types <= vm_id_set:
            return ValidationResult.invalid("UnknownVmType", f"server {s.id}")
        p = s.power_params
        if not (0.0 < p.ur_opt < 1.0):
            return ValidationResult.invalid("UrOptOutOfRange", f"server {s.id}: {p.ur_opt}")
        if p.static_watts < 0 or p.a < 0 or p.b < 0:
            return ValidationResult.invalid("NegativePowerParam", f"server {s.id}")
    known = {s.id for s in cfg.servers}
    for sid in membership:
        if sid not in known:
            return ValidationResult.invalid("OrphanServer", f"cluster member {sid} has no server")
    if cfg.bandwidth_default <= 0 or any(b <= 0 for b in cfg.bandwidth_overrides.values()):
        return ValidationResult.invalid("NonPositiveBandwidth", "")
    if cfg.horizon_hours < 1:
        return ValidationResult.invalid("InvalidHorizon", str(cfg.horizon_hours))
    return OK


def topological_order(job: Job) -> list[Task]:
    """Tasks in dependency order, ties broken by task id (deterministic)."""
    indeg = {t.task_id: 0 for t in job.tasks}
    succ: dict[int, list[int]] = {t.task_id: [] for t in job.tasks}
    for e in job.edges:
        succ[e.from_task].append(e.to_task)
        indeg[e.to_task] += 1
    ready = sorted(t for t, d in indeg.items() if d == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        changed = False
        for nxt in succ[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                changed = True
        if changed:
            ready.sort()
    if len(order) != len(job.tasks):
        raise ValueError(f"job {job.job_id} has a dependency cycle")
    by_id = {t.task_id: t for t in job.tasks}
    return [by_id[i] for i in order]
