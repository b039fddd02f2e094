"""Workload ingestion and synthesis.

Trace files use a one-task-per-line CSV schema (header required):

    job_id,task_id,arrival_minute,duration_minutes,vm_requests,priority,deadline_minute,deps

where ``vm_requests`` is ``v:cpu:mem`` triples joined by ``|`` and ``deps``
is ``parent_task_id:data_units`` pairs joined by ``|`` (may be empty).
UTF-8, LF line endings, ``.`` decimal separator.

The synthetic generator hits aggregate targets (task count, total CPU,
CPU/MEM demand variance) exactly-by-construction: demands come from a
two-level mixture solved in closed form, with small sum-preserving jitter
for texture. Everything is deterministic for a fixed (config, seed).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .domain import Edge, Job, Task, VmRequest, validate_job

TRACE_HEADER = "job_id,task_id,arrival_minute,duration_minutes,vm_requests,priority,deadline_minute,deps"


class TraceError(ValueError):
    """Base class for trace ingestion failures; carries the 1-based line."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class MalformedLine(TraceError):
    pass


class UnknownVmType(TraceError):
    pass


class DanglingDependency(TraceError):
    pass


class InfeasibleTargets(ValueError):
    """Raised when demand variance targets cannot be met by any
    non-negative demand assignment with the requested count and total."""


@dataclass(frozen=True)
class WorkloadStats:
    """Aggregate descriptors of a job sequence."""

    task_count: int
    total_cpu_units: float
    cpu_variance: float
    mem_variance: float
    span_minutes: int


@dataclass(frozen=True)
class ScenarioConfig:
    """Targets and shape knobs for synthetic workload generation.

    Ranges are inclusive. ``target_total_mem`` defaults to the CPU total,
    keeping the two demand dimensions on the same scale.
    """

    target_task_count: int
    target_total_cpu: float
    target_cpu_variance: float
    target_mem_variance: float
    span_minutes: int
    job_size_range: tuple[int, int] = (1, 7)
    edge_probability: float = 0.3
    deadline_slack_range: tuple[int, int] = (15, 840)
    duration_range: tuple[int, int] = (30, 90)
    priority_range: tuple[int, int] = (0, 59)
    target_total_mem: float | None = None
    vm_type_ids: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not 0.0 <= self.edge_probability <= 1.0:
            raise ValueError("edge_probability must be in [0, 1]")
        for name in ("job_size_range", "deadline_slack_range", "duration_range", "priority_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
        if self.job_size_range[0] < 1 or self.duration_range[0] < 1:
            raise ValueError("job sizes and durations start at 1")
        if self.target_task_count < 0 or self.span_minutes < 0:
            raise ValueError("counts and spans must be non-negative")
        if not self.vm_type_ids:
            raise ValueError("vm_type_ids must be non-empty")


# Aggregate descriptors of the public cluster-usage trace the synthetic
# scenarios emulate, per variance tier: task count, requested CPU units,
# and the variance of the per-minute aggregate CPU / MEM request series.
REFERENCE_TRACE_DESCRIPTORS = {
    "low": (77776, 2610.98, 1621.64, 479.59),
    "medium": (154001, 5776.82, 16055.58, 13543.92),
    "high": (265865, 9488.66, 42462.99, 23996.92),
}


def scaled_reference_scenario(tier: str, count_scale: float, span_minutes: int = 480) -> ScenarioConfig:
    """Scenario targets scaled down from a reference trace tier.

    Task count and total CPU shrink by ``count_scale`` (mean demand per
    task is preserved). The reference variance figures describe the
    per-minute *aggregate* request series; dividing by the task count
    converts them to a per-task demand variance of the same character,
    which is also what keeps the targets attainable with non-negative
    demands.
    """
    if tier not in REFERENCE_TRACE_DESCRIPTORS:
        raise KeyError(f"unknown tier {tier!r}")
    n_ref, cpu_ref, cpu_var_ref, mem_var_ref = REFERENCE_TRACE_DESCRIPTORS[tier]
    return ScenarioConfig(
        target_task_count=max(2, round(n_ref * count_scale)),
        target_total_cpu=cpu_ref * count_scale,
        target_cpu_variance=cpu_var_ref / n_ref,
        target_mem_variance=mem_var_ref / n_ref,
        span_minutes=span_minutes,
    )


def _fmt(x: float) -> str:
    """Shortest decimal that round-trips; integers without the trailing .0."""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def serialize_jobs(jobs: list[Job]) -> str:
    out = io.StringIO()
    out.write(TRACE_HEADER + "\n")
    for job in jobs:
        dep_map: dict[int, list[Edge]] = {}
        for e in sorted(job.edges, key=lambda e: (e.to_task, e.from_task)):
            dep_map.setdefault(e.to_task, []).append(e)
        for t in sorted(job.tasks, key=lambda t: (t.arrival_minute, t.task_id)):
            vm = "|".join(f"{r.vm_type_id}:{_fmt(r.cpu_units)}:{_fmt(r.mem_units)}" for r in t.vm_requests)
            deps = "|".join(f"{e.from_task}:{_fmt(e.data_units)}" for e in dep_map.get(t.task_id, []))
            out.write(
                f"{t.job_id},{t.task_id},{t.arrival_minute},{t.duration_minutes},"
                f"{vm},{t.priority},{t.deadline_minute},{deps}\n"
            )
    return out.getvalue()


def parse_trace(stream, known_vm_types: set[int] | None = None) -> list[Job]:
    """Parse a workload trace into validated jobs.

    ``stream`` may be a string, bytes, or a file-like object. Jobs are
    returned in first-appearance order with tasks ordered by arrival
    minute. Any structural problem aborts with the offending line number.
    """
    if isinstance(stream, bytes):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        text = stream.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return []
    if lines[0].strip() != TRACE_HEADER:
        raise MalformedLine(1, f"expected header {TRACE_HEADER!r}")

    job_tasks: dict[str, list[Task]] = {}
    job_edges: dict[str, list[Edge]] = {}
    job_first_line: dict[str, int] = {}
    task_line: dict[str, int] = {}

    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 8:
            raise MalformedLine(line_no, f"expected 8 fields, got {len(fields)}")
        job_id, task_s, arr_s, dur_s, vm_s, prio_s, ddl_s, deps_s = fields
        try:
            task_id = int(task_s)
            arrival = int(arr_s)
            duration = int(dur_s)
            priority = int(prio_s)
            deadline = int(ddl_s)
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
        if not vm_s:
            raise MalformedLine(line_no, "empty vm_requests")
        requests = []
        for part in vm_s.split("|"):
            bits = part.split(":")
            if len(bits) != 3:
                raise MalformedLine(line_no, f"bad vm request {part!r}")
            try:
                vm_id, cpu, mem = int(bits[0]), float(bits[1]), float(bits[2])
            except ValueError as exc:
                raise MalformedLine(line_no, str(exc)) from None
            if known_vm_types is not None and vm_id not in known_vm_types:
                raise UnknownVmType(line_no, f"vm type {vm_id}")
            requests.append(VmRequest(vm_id, cpu, mem))
        edges = []
        if deps_s:
            for part in deps_s.split("|"):
                bits = part.split(":")
                if len(bits) != 2:
                    raise MalformedLine(line_no, f"bad dep {part!r}")
                try:
                    parent, data = int(bits[0]), float(bits[1])
                except ValueError as exc:
                    raise MalformedLine(line_no, str(exc)) from None
                edges.append(Edge(parent, task_id, data))
        task = Task(
            job_id=job_id,
            task_id=task_id,
            vm_requests=tuple(requests),
            priority=priority,
            arrival_minute=arrival,
            duration_minutes=duration,
            deadline_minute=deadline,
        )
        job_tasks.setdefault(job_id, []).append(task)
        job_edges.setdefault(job_id, []).extend(edges)
        job_first_line.setdefault(job_id, line_no)
        task_line[f"{job_id}:{task_id}"] = line_no

    jobs = []
    for job_id, tasks in job_tasks.items():
        ids = {t.task_id for t in tasks}
        for e in job_edges[job_id]:
            if e.from_task not in ids:
                raise DanglingDependency(
                    task_line[f"{job_id}:{e.to_task}"],
                    f"task {e.to_task} depends on missing task {e.from_task}",
                )
        tasks.sort(key=lambda t: (t.arrival_minute, t.task_id))
        edges = sorted(job_edges[job_id], key=lambda e: (e.to_task, e.from_task))
        job = Job(job_id=job_id, tasks=tuple(tasks), edges=tuple(edges))
        check = validate_job(job)
        if not check:
            raise MalformedLine(job_first_line[job_id], f"invalid job {job_id}: {check.error} ({check.detail})")
        jobs.append(job)
    return jobs


def workload_stats(jobs: list[Job]) -> WorkloadStats:
    """Task count, total requested CPU, and population variances of the
    per-task CPU/MEM demand."""
    cpu = np.array([t.total_cpu for j in jobs for t in j.tasks], dtype=float)
    mem = np.array([t.total_mem for j in jobs for t in j.tasks], dtype=float)
    if cpu.size == 0:
        return WorkloadStats(0, 0.0, 0.0, 0.0, 0)
    arrivals = [t.arrival_minute for j in jobs for t in j.tasks]
    return WorkloadStats(
        task_count=int(cpu.size),
        total_cpu_units=float(cpu.sum()),
        cpu_variance=float(cpu.var()),
        mem_variance=float(mem.var()),
        span_minutes=int(max(arrivals) - min(arrivals) + 1),
    )


def _two_level_demands(n: int, total: float, variance: float, rng: np.random.Generator) -> np.ndarray:
    """n non-negative demands with the exact requested sum and (nearly)
    exact population variance, via a closed-form two-level mixture."""
    mu = total / n
    if mu < 0 or variance < 0:
        raise InfeasibleTargets(f"negative target: total={total}, variance={variance}")
    if variance == 0.0:
        return np.full(n, mu)
    if n < 2 or variance > mu * mu * (n - 1):
        raise InfeasibleTargets(
            f"variance {variance} unreachable with n={n}, mean {mu} and non-negative demands"
        )
    e2 = variance + mu * mu
    # 0.75 keeps the low level strictly positive away from the boundary.
    k = min(n - 1, max(1, math.floor(0.75 * n * mu * mu / e2)))
    q = k / n
    hi = mu + math.sqrt(variance * (1 - q) / q)
    lo = mu - math.sqrt(variance * q / (1 - q))
    if lo < 0:  # float edge of the feasibility boundary
        lo = 0.0
        hi = total / k if k else mu
    values = np.full(n, lo)
    hi_idx = rng.choice(n, size=k, replace=False)
    values[hi_idx] = hi

    # Sum-preserving jitter: opposite nudges on pairs within each level.
    for level, scale in ((lo, 0.2), (hi, 0.05)):
        if level <= 0:
            continue
        idx = np.flatnonzero(values == level)
        rng.shuffle(idx)
        half = len(idx) // 2
        if half:
            delta = rng.uniform(0, scale * level, size=half)
            values[idx[:half]] += delta
            values[idx[half : 2 * half]] -= delta
    return values


def generate_workload(cfg: ScenarioConfig, seed: int) -> list[Job]:
    """Synthesize a DAG-structured workload meeting the scenario targets.

    Deterministic for a fixed (cfg, seed). Job arrivals follow a Poisson-
    like process across the span; deadlines are the dependency-aware
    earliest finish plus a uniform slack, so every generated task is
    schedulable on an empty platform.
    """
    n = cfg.target_task_count
    rng = np.random.default_rng(seed)
    if n == 0:
        return []
    total_mem = cfg.target_total_mem if cfg.target_total_mem is not None else cfg.target_total_cpu
    cpu = _two_level_demands(n, cfg.target_total_cpu, cfg.target_cpu_variance, rng)
    mem = _two_level_demands(n, total_mem, cfg.target_mem_variance, rng)

    # Partition tasks into jobs.
    jmin, jmax = cfg.job_size_range
    sizes: list[int] = []
    left = n
    while left > 0:
        size = int(rng.integers(jmin, jmax + 1))
        sizes.append(min(size, left))
        left -= sizes[-1]
    n_jobs = len(sizes)

    arrivals = np.sort(rng.integers(0, max(1, cfg.span_minutes), size=n_jobs))
    durations = rng.integers(cfg.duration_range[0], cfg.duration_range[1] + 1, size=n)
    priorities = rng.integers(cfg.priority_range[0], cfg.priority_range[1] + 1, size=n)
    slacks = rng.integers(cfg.deadline_slack_range[0], cfg.deadline_slack_range[1] + 1, size=n)
    vm_ids = rng.choice(np.array(cfg.vm_type_ids), size=n)

    jobs: list[Job] = []
    cursor = 0
    width = len(str(max(1, n_jobs - 1)))
    for j, size in enumerate(sizes):
        job_id = f"j{j:0{width}d}"
        arrival = int(arrivals[j])
        edges: list[Edge] = []
        for b in range(1, size):
            for a in range(b):
                if rng.random() < cfg.edge_probability:
                    edges.append(Edge(a, b, float(rng.integers(1, 21))))
        edges.sort(key=lambda e: (e.to_task, e.from_task))

        # Deadlines are anchored at the dependency chain's earliest finish
        # (2 spare minutes per hop for handoff plus a short transfer). The
        # job's slack draws are reassigned non-decreasing in chain depth,
        # which guarantees every task a non-empty start window whenever its
        # parents are placed within their own deadlines.
        preds: dict[int, list[int]] = {i: [] for i in range(size)}
        for e in edges:
            preds[e.to_task].append(e.from_task)
        chain_start: list[int] = []
        for i in range(size):
            start = arrival
            for p in preds[i]:
                start = max(start, chain_start[p] + int(durations[cursor + p]) + 2)
            chain_start.append(start)
        job_slacks = sorted(int(s) for s in slacks[cursor : cursor + size])
        depth_rank = {i: r for r, i in enumerate(sorted(range(size), key=lambda i: (chain_start[i], i)))}
        deadlines = [
            chain_start[i] + int(durations[cursor + i]) + job_slacks[depth_rank[i]] for i in range(size)
        ]

        tasks = []
        for i in range(size):
            g = cursor + i
            tasks.append(
                Task(
                    job_id=job_id,
                    task_id=i,
                    vm_requests=(VmRequest(int(vm_ids[g]), float(cpu[g]), float(mem[g])),),
                    priority=int(priorities[g]),
                    arrival_minute=arrival,
                    duration_minutes=int(durations[g]),
                    deadline_minute=deadlines[i],
                )
            )
        cursor += size
        job = Job(job_id=job_id, tasks=tuple(tasks), edges=tuple(edges))
        jobs.append(job)
    return jobs
