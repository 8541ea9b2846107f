"""Shared domain types and the stress-to-allocation arithmetic.

Everything here is an immutable value; the operations are pure functions,
safe to call from any number of concurrent callers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

SERVICE_NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")

# Stress is capped below 100%: throttling a resource to zero deadlocks real
# systems and divides by zero in the simulator.
MAX_STRESS_PERCENT = 95.0


class ConfigError(ValueError):
    """A configuration or spec object failed validation.

    Carries the full list of violations, never just the first one.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ResourceKind(Enum):
    """Throttleable resource kinds; every kind has a fixed canonical unit."""

    CPU_QUOTA = "CPU_QUOTA"
    CPU_CORES = "CPU_CORES"
    DISK_READ_BW = "DISK_READ_BW"
    DISK_WRITE_BW = "DISK_WRITE_BW"
    DISK_RW_BW = "DISK_RW_BW"
    NET_BW = "NET_BW"

    @property
    def unit(self) -> str:
        return _RESOURCE_UNITS[self]

    @property
    def is_cpu(self) -> bool:
        return self in (ResourceKind.CPU_QUOTA, ResourceKind.CPU_CORES)

    def __lt__(self, other: "ResourceKind") -> bool:
        # Lexicographic by name, so schedules sort deterministically.
        if not isinstance(other, ResourceKind):
            return NotImplemented
        return self.name < other.name


_RESOURCE_UNITS = {
    ResourceKind.CPU_QUOTA: "fractional cores",
    ResourceKind.CPU_CORES: "whole cores",
    ResourceKind.DISK_READ_BW: "bytes/second",
    ResourceKind.DISK_WRITE_BW: "bytes/second",
    ResourceKind.DISK_RW_BW: "bytes/second",
    ResourceKind.NET_BW: "bits/second",
}


class Direction(Enum):
    LOWER_IS_BETTER = "LOWER_IS_BETTER"
    HIGHER_IS_BETTER = "HIGHER_IS_BETTER"


@dataclass(frozen=True)
class MetricSpec:
    """The performance metric the experiment optimizes for.

    ``direction`` fixes the sign convention of degradation everywhere.
    """

    name: str
    direction: Direction
    unit: str = ""


@dataclass(frozen=True, order=True)
class Target:
    """A (service, resource) pair eligible for throttling."""

    service: str
    resource: ResourceKind

    def __str__(self) -> str:
        return f"({self.service}, {self.resource.name})"


@dataclass(frozen=True)
class StressLevel:
    """Percentage by which an allocation is reduced; k% stress leaves (1-k)%."""

    percent: float

    def __post_init__(self):
        if not (0.0 <= self.percent <= MAX_STRESS_PERCENT):
            raise ValueError(
                f"stress level must be in [0, {MAX_STRESS_PERCENT:g}], got {self.percent!r}"
            )

    @property
    def keep_fraction(self) -> float:
        return 1.0 - self.percent / 100.0


@dataclass(frozen=True)
class Allocation:
    """Baseline amount of one resource assigned to one service.

    ``value`` is in the kind's canonical unit; ``capacity`` is the machine
    maximum for that resource (value <= capacity).
    """

    service: str
    resource: ResourceKind
    value: float
    capacity: float

    @property
    def target(self) -> Target:
        return Target(self.service, self.resource)


@dataclass(frozen=True)
class ServiceSpec:
    """One microservice and its baseline allocations.

    The command backend fields (cgroup, devices, cpuset list, reconfigure
    hook) are optional annotations; the simulator ignores them.
    """

    name: str
    allocations: tuple[Allocation, ...]
    machine: str | None = None
    cgroup: str | None = None
    net_device: str | None = None
    block_device: str | None = None
    cpuset_cores: str | None = None
    disk_read_capacity_bps: float | None = None
    disk_write_capacity_bps: float | None = None
    reconfigure_command: str | None = None


@dataclass(frozen=True)
class ApplicationSpec:
    """Services, their baseline allocations, and (optionally) a simulation model.

    ``simulation`` is the deterministic app model consumed by the sim backend;
    it is None when the experiment targets a real deployment.
    """

    services: tuple[ServiceSpec, ...]
    simulation: "object | None" = None  # simulator.SimApp; kept loose to avoid a cycle

    def allocation_map(self) -> dict[Target, Allocation]:
        return {a.target: a for s in self.services for a in s.allocations}

    def targets(self) -> list[Target]:
        return sorted(self.allocation_map())

    def service(self, name: str) -> ServiceSpec:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)


def effective_allocation(alloc: Allocation, level: StressLevel) -> float:
    """Allocation left after applying k% stress: value * (1 - k/100).

    CPU core counts are integral, so CPU_CORES floors the result and never
    drops below one core (a container with zero cores cannot run).
    """
    scaled = alloc.value * level.keep_fraction
    if alloc.resource == ResourceKind.CPU_CORES:
        return float(max(1, math.floor(scaled)))
    return scaled


def _disk_mutual_exclusion(allocs: list[Allocation]) -> list[str]:
    violations = []
    by_service: dict[str, set[ResourceKind]] = {}
    for a in allocs:
        by_service.setdefault(a.service, set()).add(a.resource)
    for name, kinds in sorted(by_service.items()):
        if ResourceKind.DISK_RW_BW in kinds and (
            ResourceKind.DISK_READ_BW in kinds or ResourceKind.DISK_WRITE_BW in kinds
        ):
            violations.append(
                f"service {name!r}: DISK_RW_BW is joint read+write throttling and is "
                "mutually exclusive with DISK_READ_BW/DISK_WRITE_BW in one schedule"
            )
    return violations


def validate_application_spec(
    spec: ApplicationSpec, blacklist: "tuple | list" = ()
) -> list[str]:
    """Validate an application spec, returning the full list of violations.

    Checks: unique well-formed service names, positive allocations within
    capacity, integral CPU_CORES values, disk joint/individual exclusivity,
    simulation model consistency (acyclic call graph, known callees, demands
    covered by allocations), and that blacklist entries reference existing
    targets/services/resources/machines.
    """
    violations: list[str] = []

    seen: set[str] = set()
    for s in spec.services:
        if not SERVICE_NAME_RE.match(s.name):
            violations.append(f"service name {s.name!r} must match [A-Za-z0-9_-]+")
        if s.name in seen:
            violations.append(f"duplicate service name {s.name!r}")
        seen.add(s.name)

    all_allocs = [a for s in spec.services for a in s.allocations]
    for a in all_allocs:
        where = f"allocation ({a.service}, {a.resource.name})"
        if not a.value > 0:
            violations.append(f"{where}: value must be positive, got {a.value!r}")
        if a.capacity < a.value:
            violations.append(
                f"{where}: capacity {a.capacity!r} is below value {a.value!r}"
            )
        if a.resource == ResourceKind.CPU_CORES and a.value != int(a.value):
            violations.append(f"{where}: CPU_CORES value must be a whole core count")
    violations.extend(_disk_mutual_exclusion(all_allocs))

    if spec.simulation is not None:
        violations.extend(_validate_simulation(spec))

    targets = {(a.service, a.resource) for a in all_allocs}
    machines = {s.machine for s in spec.services if s.machine}
    for entry in blacklist:
        svc = getattr(entry, "service", None)
        res = getattr(entry, "resource", None)
        machine = getattr(entry, "machine", None)
        if machine is not None:
            if machine not in machines:
                violations.append(f"blacklist machine {machine!r} pins no service")
            continue
        if svc is not None and svc not in seen:
            violations.append(f"blacklist references unknown service {svc!r}")
        elif svc is not None and res is not None and (svc, res) not in targets:
            violations.append(
                f"blacklist references unknown target ({svc}, {res.name})"
            )
        elif svc is None and res is not None and not any(r == res for _, r in targets):
            violations.append(f"blacklist resource {res.name} matches no allocation")

    return violations


def _validate_simulation(spec: ApplicationSpec) -> list[str]:
    from . import simulator  # local import: core must not depend on simulator at import time

    sim = spec.simulation
    violations: list[str] = []
    if not isinstance(sim, simulator.SimApp):
        return [f"simulation must be a SimApp, got {type(sim).__name__}"]

    app_names = {s.name for s in spec.services}
    sim_names = {s.id for s in sim.services}
    for s in sim.services:
        if s.id not in app_names:
            violations.append(f"simulated service {s.id!r} has no service entry")
        if not s.phases:
            violations.append(f"simulated service {s.id!r} has no phases")
        if s.parallelism < 1:
            violations.append(f"simulated service {s.id!r}: parallelism must be >= 1")
        for ph in s.phases:
            if isinstance(ph, simulator.WorkPhase) and not ph.demand > 0:
                violations.append(
                    f"simulated service {s.id!r}: phase demand must be positive"
                )
            if isinstance(ph, simulator.CallPhase) and ph.callee not in sim_names:
                violations.append(
                    f"simulated service {s.id!r} calls undefined service {ph.callee!r}"
                )
    if sim.root not in sim_names:
        violations.append(f"simulation root {sim.root!r} is not a simulated service")

    cycle = _find_call_cycle(sim)
    if cycle:
        violations.append("call graph has a cycle: " + " -> ".join(cycle))

    alloc_targets = {(a.service, a.resource) for s in spec.services for a in s.allocations}
    demanded = set()
    for s in sim.services:
        for ph in s.phases:
            if isinstance(ph, simulator.WorkPhase):
                demanded.add((s.id, ph.resource))
    for svc, res in sorted(demanded, key=lambda t: (t[0], t[1].name)):
        if (svc, res) not in alloc_targets:
            violations.append(
                f"simulated service {svc!r} demands {res.name} but has no allocation for it"
            )
    return violations


def _find_call_cycle(sim) -> list[str] | None:
    from . import simulator

    edges: dict[str, list[str]] = {}
    for s in sim.services:
        edges[s.id] = [p.callee for p in s.phases if isinstance(p, simulator.CallPhase)]

    WHITE, GREY, BLACK = 0, 1, 2
    color = {name: WHITE for name in edges}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GREY
        stack.append(node)
        for nxt in edges.get(node, ()):
            if nxt not in color:
                continue  # undefined callee reported separately
            if color[nxt] == GREY:
                return stack[stack.index(nxt):] + [nxt]
            if color[nxt] == WHITE:
                found = visit(nxt)
                if found:
                    return found
        color[node] = BLACK
        stack.pop()
        return None

    for name in sorted(edges):
        if color[name] == WHITE:
            found = visit(name)
            if found:
                return found
    return None
