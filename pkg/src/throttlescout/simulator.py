"""Deterministic microservice application model.

A request enters at the root service and runs its phases strictly in order:
work phases block on one resource, call phases block on a downstream service.
Completion time is therefore a sum of demand/allocation terms along the call
tree, which keeps the model analytically checkable and makes the brute-force
provisioning oracle below exact ground truth.

CPU work is capped by the service's parallelism: allocating cores or quota
beyond what the service can exploit never changes any completion time.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import Allocation, Direction, MetricSpec, ResourceKind, Target


@dataclass(frozen=True)
class WorkPhase:
    """Blocking consumption of one resource.

    ``demand`` is in resource-unit-seconds at unit allocation, so the phase
    takes demand / effective_allocation seconds.
    """

    resource: ResourceKind
    demand: float


@dataclass(frozen=True)
class CallPhase:
    """A blocking synchronous call to another service."""

    callee: str


Phase = WorkPhase | CallPhase


@dataclass(frozen=True)
class SimService:
    id: str
    phases: tuple[Phase, ...]
    parallelism: int = 1


@dataclass(frozen=True)
class SimApp:
    """The modeled application; the root's completion time is the latency metric."""

    services: tuple[SimService, ...]
    root: str

    def service(self, name: str) -> SimService:
        for s in self.services:
            if s.id == name:
                return s
        raise KeyError(name)


AllocationValues = dict[Target, float]


def allocation_values(allocs: dict[Target, Allocation]) -> AllocationValues:
    """Flatten Allocation objects to the bare values the simulator consumes."""
    return {t: a.value for t, a in allocs.items()}


def _effective_rate(svc: SimService, resource: ResourceKind, value: float) -> float:
    if resource.is_cpu:
        return min(value, float(svc.parallelism))
    return value


def service_completion_time(app: SimApp, service: str, alloc: AllocationValues) -> float:
    """Seconds for one request through ``service``, phases strictly sequential."""
    svc = app.service(service)
    total = 0.0
    for phase in svc.phases:
        if isinstance(phase, CallPhase):
            total += service_completion_time(app, phase.callee, alloc)
            continue
        key = Target(service, phase.resource)
        if key not in alloc:
            raise KeyError(f"no allocation for {key}")
        rate = _effective_rate(svc, phase.resource, alloc[key])
        total += phase.demand / rate
    return total


def simulate_metric(app: SimApp, alloc: AllocationValues, metric: MetricSpec) -> float:
    """Metric value for the current allocation.

    LOWER_IS_BETTER reads as end-to-end latency; HIGHER_IS_BETTER as
    requests/second at concurrency one (the reciprocal).
    """
    completion = service_completion_time(app, app.root, alloc)
    if metric.direction == Direction.HIGHER_IS_BETTER:
        return 1.0 / completion
    return completion


def relative_improvement(base: float, improved: float, direction: Direction) -> float:
    """Signed relative change in the metric, positive = better."""
    if direction == Direction.HIGHER_IS_BETTER:
        return (improved - base) / base
    return (base - improved) / base


def provisioning_improvement(
    app: SimApp,
    alloc: AllocationValues,
    metric: MetricSpec,
    targets: list[Target] | tuple[Target, ...],
    factor: float,
) -> float:
    """Fractional metric improvement from multiplying each target's allocation by (1+factor).

    ``factor=math.inf`` measures the unbounded-provisioning limit, where only
    CPU parallelism ceilings still bind.
    """
    base = simulate_metric(app, alloc, metric)
    boosted = dict(alloc)
    for t in targets:
        boosted[t] = alloc[t] * (1.0 + factor)
    improved = simulate_metric(app, boosted, metric)
    return relative_improvement(base, improved, metric.direction)


def brute_force_ranking(
    app: SimApp,
    alloc: AllocationValues,
    metric: MetricSpec,
    factor: float = 1.0,
    targets: list[Target] | None = None,
) -> list[tuple[Target, float]]:
    """Ground-truth ranking: provision each target alone, measure what it buys.

    Returns (target, improvement fraction) sorted by improvement descending,
    ties broken lexicographically by (service, resource).
    """
    if not factor > 0:
        raise ValueError(f"provisioning factor must be positive, got {factor!r}")
    picked = sorted(alloc) if targets is None else sorted(targets)
    scored = [
        (t, provisioning_improvement(app, alloc, metric, [t], factor)) for t in picked
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


# Random app generation, used by the property suites and `validate --random`.
#
# SERIES builds a single call chain of continuous-rate resources with an
# effectively unlimited parallelism cap, so throttle degradation and
# provisioning improvement are both monotone in demand/allocation and their
# argmaxes provably agree.  DAG adds fan-out plus finite parallelism and
# whole-core allocations, the two nonlinearities that let the
# degradation/improvement correlation break down.

SERIES = "SERIES"
DAG = "DAG"

_UNCAPPED_PARALLELISM = 10**9

_SERIES_RESOURCES = (
    ResourceKind.CPU_QUOTA,
    ResourceKind.DISK_READ_BW,
    ResourceKind.DISK_WRITE_BW,
    ResourceKind.NET_BW,
)
_DAG_RESOURCES = _SERIES_RESOURCES + (ResourceKind.CPU_CORES,)


def generate_random_app(
    seed: int, n_services: int, shape: str = SERIES
) -> tuple[SimApp, AllocationValues]:
    """Deterministically generate a random app and its baseline allocation map."""
    if n_services < 1:
        raise ValueError("n_services must be >= 1")
    if shape not in (SERIES, DAG):
        raise ValueError(f"shape must be SERIES or DAG, got {shape!r}")
    rng = random.Random(seed)

    names = [f"s{i:02d}" for i in range(n_services)]
    alloc: AllocationValues = {}
    services: list[SimService] = []

    def add_allocation(svc: str, res: ResourceKind) -> None:
        key = Target(svc, res)
        if key in alloc:
            return
        if res == ResourceKind.CPU_CORES:
            alloc[key] = float(rng.randint(1, 4))
        else:
            alloc[key] = rng.uniform(0.5, 4.0)

    resources = _SERIES_RESOURCES if shape == SERIES else _DAG_RESOURCES
    for i, name in enumerate(names):
        phases: list[Phase] = []
        for _ in range(rng.randint(1, 3)):
            res = rng.choice(resources)
            phases.append(WorkPhase(res, rng.uniform(1.0, 10.0)))
            add_allocation(name, res)
        # Occasionally allocate a resource the service never touches; its
        # target must rank with exactly zero degradation and improvement.
        if rng.random() < 0.25:
            spare = rng.choice(resources)
            add_allocation(name, spare)

        if shape == SERIES:
            parallelism = _UNCAPPED_PARALLELISM
            if i + 1 < n_services:
                phases.append(CallPhase(names[i + 1]))
        else:
            parallelism = rng.randint(1, 4)
            for j in range(i + 1, n_services):
                if rng.random() < 0.35:
                    phases.append(CallPhase(names[j]))
        services.append(SimService(name, tuple(phases), parallelism))

    if shape == DAG and n_services > 1:
        # Guarantee every service is reachable from the root: any orphan gets
        # one incoming call from a random earlier service.
        called = {
            p.callee for s in services for p in s.phases if isinstance(p, CallPhase)
        }
        for i in range(1, n_services):
            if names[i] not in called:
                caller_idx = rng.randrange(0, i)
                caller = services[caller_idx]
                services[caller_idx] = SimService(
                    caller.id, caller.phases + (CallPhase(names[i]),), caller.parallelism
                )
                called.add(names[i])

    return SimApp(tuple(services), names[0]), alloc
