"""Shared fixtures: the chain app, the streaming-pipeline results table, and
the two microbenchmark scenarios used across the suite."""

from __future__ import annotations

import json
import random

import pytest

from throttlescout.core import (
    Allocation,
    ApplicationSpec,
    Direction,
    MetricSpec,
    ResourceKind,
    ServiceSpec,
    StressLevel,
    Target,
)
from throttlescout.planner import BlacklistEntry, ExperimentConfig
from throttlescout.runner import OK, MeasurementRecord
from throttlescout.simulator import CallPhase, SimApp, SimService, WorkPhase

LATENCY_S = MetricSpec("latency", Direction.LOWER_IS_BETTER, "s")
LATENCY_MS = MetricSpec("latency", Direction.LOWER_IS_BETTER, "ms")


def make_record(service, resource, level, rep, value, status=OK, reason=None):
    target = Target(service, resource) if service is not None else None
    return MeasurementRecord(
        target=target,
        level=StressLevel(level) if target is not None else None,
        rep=rep,
        metric_value=value,
        status=status,
        reason=reason,
        started_at="2026-08-11T00:00:00+00:00",
        ended_at="2026-08-11T00:00:01+00:00",
        backend="fixture",
    )


# Two-service chain: frontend does 4s of CPU work, blocks on storage
# (10s disk read + 3s CPU), then pushes 2s over the network.  All unit
# allocations: baseline completion 4 + (10 + 3) + 2 = 19 s.

def build_chain2():
    storage = SimService(
        "storage",
        (WorkPhase(ResourceKind.DISK_READ_BW, 10.0), WorkPhase(ResourceKind.CPU_QUOTA, 3.0)),
        parallelism=1,
    )
    frontend = SimService(
        "frontend",
        (
            WorkPhase(ResourceKind.CPU_QUOTA, 4.0),
            CallPhase("storage"),
            WorkPhase(ResourceKind.NET_BW, 2.0),
        ),
        parallelism=1,
    )
    app = SimApp((frontend, storage), "frontend")
    allocations = {
        Target("frontend", ResourceKind.CPU_QUOTA): Allocation(
            "frontend", ResourceKind.CPU_QUOTA, 1.0, 4.0
        ),
        Target("frontend", ResourceKind.NET_BW): Allocation(
            "frontend", ResourceKind.NET_BW, 1.0, 4.0
        ),
        Target("storage", ResourceKind.CPU_QUOTA): Allocation(
            "storage", ResourceKind.CPU_QUOTA, 1.0, 4.0
        ),
        Target("storage", ResourceKind.DISK_READ_BW): Allocation(
            "storage", ResourceKind.DISK_READ_BW, 1.0, 4.0
        ),
    }
    return app, allocations


@pytest.fixture
def chain2():
    return build_chain2()


def chain2_config(levels=(50.0,), repetitions=1) -> ExperimentConfig:
    app, allocations = build_chain2()
    by_service = {}
    for alloc in allocations.values():
        by_service.setdefault(alloc.service, []).append(alloc)
    services = tuple(
        ServiceSpec(name=name, allocations=tuple(allocs))
        for name, allocs in sorted(by_service.items())
    )
    return ExperimentConfig(
        application=ApplicationSpec(services, app),
        stress_levels=tuple(StressLevel(p) for p in levels),
        repetitions=repetitions,
        metric=LATENCY_S,
    )


CHAIN2_CONFIG_JSON = {
    "application": {
        "services": [
            {
                "name": "frontend",
                "allocations": [
                    {"resource": "CPU_QUOTA", "value": 1.0, "capacity": 4.0},
                    {"resource": "NET_BW", "value": 1.0, "capacity": 4.0},
                ],
            },
            {
                "name": "storage",
                "allocations": [
                    {"resource": "CPU_QUOTA", "value": 1.0, "capacity": 4.0},
                    {"resource": "DISK_READ_BW", "value": 1.0, "capacity": 4.0},
                ],
            },
        ],
        "simulation": {
            "root": "frontend",
            "services": [
                {
                    "name": "frontend",
                    "parallelism": 1,
                    "phases": [
                        {"type": "work", "resource": "CPU_QUOTA", "demand": 4.0},
                        {"type": "call", "callee": "storage"},
                        {"type": "work", "resource": "NET_BW", "demand": 2.0},
                    ],
                },
                {
                    "name": "storage",
                    "parallelism": 1,
                    "phases": [
                        {"type": "work", "resource": "DISK_READ_BW", "demand": 10.0},
                        {"type": "work", "resource": "CPU_QUOTA", "demand": 3.0},
                    ],
                },
            ],
        },
    },
    "stress_levels": [50],
    "repetitions": 1,
    "metric": {"name": "latency", "direction": "LOWER_IS_BETTER", "unit": "s"},
    "seed": 0,
    "backend": "sim",
}


def write_chain2_config(path, **updates):
    doc = json.loads(json.dumps(CHAIN2_CONFIG_JSON))
    doc.update(updates)
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


# Streaming-pipeline latency table: baseline 31950 ms and the per-target
# latency deltas (ms) observed when each resource was throttled.

STREAM_BASELINE_MS = 31950.0

STREAM_DELTAS = {
    ("spark-master", ResourceKind.CPU_CORES): -3242.0,
    ("spark-master", ResourceKind.DISK_RW_BW): 25578.4,
    ("spark-master", ResourceKind.NET_BW): 1922.4,
    ("spark-worker", ResourceKind.CPU_CORES): 546.3,
    ("spark-worker", ResourceKind.DISK_RW_BW): 2433.9,
    ("spark-worker", ResourceKind.NET_BW): 9547.7,
    ("kafka", ResourceKind.CPU_CORES): -2869.3,
    ("kafka", ResourceKind.DISK_RW_BW): 4058.2,
    ("kafka", ResourceKind.NET_BW): 98696.2,
    ("redis", ResourceKind.CPU_CORES): 488.5,
    ("redis", ResourceKind.DISK_RW_BW): -1552.9,
    ("redis", ResourceKind.NET_BW): 7481.0,
}

# Expected descending-degradation order, frozen by sorting the deltas by hand.
STREAM_RANK_ORDER = [
    ("kafka", ResourceKind.NET_BW),
    ("spark-master", ResourceKind.DISK_RW_BW),
    ("spark-worker", ResourceKind.NET_BW),
    ("redis", ResourceKind.NET_BW),
    ("kafka", ResourceKind.DISK_RW_BW),
    ("spark-worker", ResourceKind.DISK_RW_BW),
    ("spark-worker", ResourceKind.CPU_CORES),
    ("redis", ResourceKind.CPU_CORES),
    ("redis", ResourceKind.DISK_RW_BW),
    ("kafka", ResourceKind.CPU_CORES),
    ("spark-master", ResourceKind.CPU_CORES),
]

STREAM_LEVEL = 50.0


def streaming_records():
    records = [make_record(None, None, 0.0, 1, STREAM_BASELINE_MS)]
    for (service, resource), delta in sorted(
        STREAM_DELTAS.items(), key=lambda kv: (kv[0][0], kv[0][1].name)
    ):
        records.append(
            make_record(service, resource, STREAM_LEVEL, 1, STREAM_BASELINE_MS + delta)
        )
    return records


def write_streaming_results(path):
    lines = [json.dumps(r.to_row(), sort_keys=True) for r in streaming_records()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


STREAMING_CONFIG_JSON = {
    "application": {
        "services": [
            {
                "name": name,
                "allocations": [
                    {"resource": "CPU_CORES", "value": 4, "capacity": 8},
                    {"resource": "DISK_RW_BW", "value": 100e6, "capacity": 200e6},
                    {"resource": "NET_BW", "value": 1e9, "capacity": 1e9},
                ],
            }
            for name in ["kafka", "redis", "spark-master", "spark-worker"]
        ]
    },
    "stress_levels": [50],
    "repetitions": 1,
    "metric": {"name": "latency", "direction": "LOWER_IS_BETTER", "unit": "ms"},
    "thresholds": {"imr_theta": 0.5, "paradox_epsilon": 0.05},
    "seed": 0,
    "backend": "sim",
}


def write_streaming_config(path, **updates):
    doc = json.loads(json.dumps(STREAMING_CONFIG_JSON))
    doc.update(updates)
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


# Single-service microbenchmark: 48s of single-threaded CPU work plus 26s
# each of disk and network flushing.  Baseline completion 48+26+26 = 100 s.

def build_single_service():
    svc = SimService(
        "worker",
        (
            WorkPhase(ResourceKind.CPU_CORES, 48.0),
            WorkPhase(ResourceKind.DISK_RW_BW, 26.0),
            WorkPhase(ResourceKind.NET_BW, 26.0),
        ),
        parallelism=1,
    )
    app = SimApp((svc,), "worker")
    allocations = {
        Target("worker", ResourceKind.CPU_CORES): Allocation(
            "worker", ResourceKind.CPU_CORES, 1.0, 16.0
        ),
        Target("worker", ResourceKind.DISK_RW_BW): Allocation(
            "worker", ResourceKind.DISK_RW_BW, 1.0, 16.0
        ),
        Target("worker", ResourceKind.NET_BW): Allocation(
            "worker", ResourceKind.NET_BW, 1.0, 16.0
        ),
    }
    return app, allocations


# Multiservice microbenchmark: a frontend blocking on a storage service whose
# disk-read phase dominates; CPU on both sides is single-threaded with one
# core, and the frontend's disk allocation is never exercised.

def build_multiservice():
    storage = SimService(
        "storage",
        (WorkPhase(ResourceKind.DISK_READ_BW, 20.0), WorkPhase(ResourceKind.CPU_CORES, 3.0)),
        parallelism=1,
    )
    frontend = SimService(
        "frontend",
        (WorkPhase(ResourceKind.CPU_CORES, 2.0), CallPhase("storage")),
        parallelism=1,
    )
    app = SimApp((frontend, storage), "frontend")
    allocations = {
        Target("frontend", ResourceKind.CPU_CORES): Allocation(
            "frontend", ResourceKind.CPU_CORES, 1.0, 8.0
        ),
        Target("frontend", ResourceKind.DISK_READ_BW): Allocation(
            "frontend", ResourceKind.DISK_READ_BW, 1.0, 8.0
        ),
        Target("storage", ResourceKind.CPU_CORES): Allocation(
            "storage", ResourceKind.CPU_CORES, 1.0, 8.0
        ),
        Target("storage", ResourceKind.DISK_READ_BW): Allocation(
            "storage", ResourceKind.DISK_READ_BW, 1.0, 8.0
        ),
    }
    return app, allocations


def config_for(app, allocations, levels=(20.0, 40.0, 60.0, 80.0), repetitions=1,
                theta=0.10, epsilon=0.05, metric=LATENCY_S, blacklist=()):
    by_service = {}
    for alloc in allocations.values():
        by_service.setdefault(alloc.service, []).append(alloc)
    services = tuple(
        ServiceSpec(name=name, allocations=tuple(sorted(allocs, key=lambda a: a.resource.name)))
        for name, allocs in sorted(by_service.items())
    )
    return ExperimentConfig(
        application=ApplicationSpec(services, app),
        blacklist=tuple(blacklist),
        stress_levels=tuple(StressLevel(p) for p in levels),
        repetitions=repetitions,
        metric=metric,
        imr_threshold=theta,
        paradox_epsilon=epsilon,
    )


def random_experiment_config(seed: int) -> ExperimentConfig:
    """Random (simulation-free) config for schedule property tests."""
    rng = random.Random(seed)
    n_services = rng.randint(1, 4)
    kinds = list(ResourceKind)
    services = []
    for i in range(n_services):
        picked = rng.sample(kinds, rng.randint(1, 3))
        if ResourceKind.DISK_RW_BW in picked:
            picked = [
                k
                for k in picked
                if k not in (ResourceKind.DISK_READ_BW, ResourceKind.DISK_WRITE_BW)
            ]
        allocations = []
        for kind in picked:
            value = float(rng.randint(1, 8)) if kind == ResourceKind.CPU_CORES else rng.uniform(0.5, 100.0)
            allocations.append(Allocation(f"svc{i}", kind, value, value * rng.uniform(1.0, 4.0)))
        services.append(ServiceSpec(name=f"svc{i}", allocations=tuple(allocations)))

    app = ApplicationSpec(tuple(services))
    targets = app.targets()
    blacklist = []
    for target in targets:
        if rng.random() < 0.2:
            blacklist.append(BlacklistEntry(service=target.service, resource=target.resource))
    if rng.random() < 0.1 and services:
        blacklist.append(BlacklistEntry(service=services[0].name))

    n_levels = rng.randint(1, 4)
    percents = sorted(rng.sample(range(5, 96), n_levels))
    return ExperimentConfig(
        application=app,
        blacklist=tuple(blacklist),
        stress_levels=tuple(StressLevel(float(p)) for p in percents),
        repetitions=rng.randint(1, 3),
        metric=LATENCY_S,
        seed=seed,
    )
