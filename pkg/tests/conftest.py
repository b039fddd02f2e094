"""Shared builders for small test platforms and workloads."""

from __future__ import annotations

import pytest

from cloudsched.domain import (
    Job,
    PlatformConfig,
    PowerParams,
    Server,
    Task,
    VmRequest,
    VmType,
)

DEFAULT_POWER = PowerParams(static_watts=100.0, a=100.0, b=200.0, ur_opt=0.7)


def make_task(
    job_id="j0",
    task_id=0,
    cpu=1.0,
    mem=1.0,
    vm=0,
    priority=0,
    arrival=0,
    duration=10,
    deadline=None,
):
    if deadline is None:
        deadline = arrival + duration + 100
    return Task(
        job_id=job_id,
        task_id=task_id,
        vm_requests=(VmRequest(vm, cpu, mem),),
        priority=priority,
        arrival_minute=arrival,
        duration_minutes=duration,
        deadline_minute=deadline,
    )


def make_job(job_id="j0", tasks=None, edges=()):
    if tasks is None:
        tasks = [make_task(job_id=job_id)]
    return Job(job_id=job_id, tasks=tuple(tasks), edges=tuple(edges))


def make_platform(
    n_servers=2,
    n_clusters=1,
    cpu=4.0,
    mem=4.0,
    horizon_hours=2,
    power=DEFAULT_POWER,
    supported=frozenset({0, 1}),
    bandwidth=50.0,
):
    per = max(1, n_servers // n_clusters)
    servers = tuple(
        Server(
            id=i,
            cluster_id=min(i // per, n_clusters - 1),
            cpu_capacity=cpu,
            mem_capacity=mem,
            supported_vm_types=supported,
            power_params=power,
        )
        for i in range(n_servers)
    )
    clusters: dict[int, list[int]] = {}
    for s in servers:
        clusters.setdefault(s.cluster_id, []).append(s.id)
    return PlatformConfig(
        servers=servers,
        clusters={c: tuple(v) for c, v in clusters.items()},
        vm_types=(VmType(0, 1.0, 1.0), VmType(1, 1.0, 0.5)),
        bandwidth_default=bandwidth,
        horizon_hours=horizon_hours,
    )


@pytest.fixture
def two_server_platform():
    return make_platform()
