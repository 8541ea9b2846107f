"""Stress application backends.

Two interchangeable implementations: SimBackend rewrites the allocation map
of the in-process simulator; CommandBackend renders and (optionally) executes
cgroup-v2 writes and tc commands against a real host.

A backend instance is a single-owner state machine: at most one target is
stressed at any instant, and CLEAR must restore the exact pre-APPLY state.
Instances must not be shared across concurrent experiment runners.

The emit_* functions are pure: identical inputs produce identical command
strings, which is what makes golden-file and parse-back testing possible.
Uses the cgroup v2 unified hierarchy (cpu.max, cpuset.cpus, io.max); tc uses
replace/del so retries are idempotent.
"""

from __future__ import annotations

import logging
import math
import subprocess
from dataclasses import dataclass
from enum import Enum

from .core import (
    Allocation,
    ApplicationSpec,
    ResourceKind,
    ServiceSpec,
    StressLevel,
    Target,
    effective_allocation,
)
from .simulator import SimApp, allocation_values

CPU_PERIOD_US = 100_000
MIN_QUOTA_US = 1_000  # kernel refuses cpu.max quotas below 1000 us


class StressStateError(RuntimeError):
    """The backend state machine was driven out of contract (overlapping
    stress, clearing a never-stressed target, ...)."""


class BackendError(RuntimeError):
    """A backend action failed (command error, missing host configuration)."""


class ActionKind(Enum):
    APPLY = "APPLY"
    CLEAR = "CLEAR"
    PROBE = "PROBE"


@dataclass(frozen=True)
class BackendAction:
    kind: ActionKind
    target: Target
    level: StressLevel | None = None  # APPLY only


@dataclass(frozen=True)
class PlanStep:
    command: str
    effect: str


@dataclass(frozen=True)
class CommandPlan:
    """Fully rendered, replayable command sequence for one backend action."""

    steps: tuple[PlanStep, ...]
    dry_run: bool = False

    def commands(self) -> list[str]:
        return [s.command for s in self.steps]


def _cgroup_path(group: str, filename: str, cgroup_root: str) -> str:
    return f"{cgroup_root}/{group}/{filename}"


def emit_cpu_quota_commands(
    target: Target,
    level: StressLevel,
    baseline_cores: float,
    group: str,
    cgroup_root: str = "/sys/fs/cgroup",
) -> CommandPlan:
    """CFS bandwidth throttle: one write of "<quota> <period>" to cpu.max.

    Period is fixed at 100000 us; quota = round(baseline * (1-k/100) * period).
    Refuses quotas below the 1000 us kernel minimum.
    """
    quota = round(baseline_cores * level.keep_fraction * CPU_PERIOD_US)
    if quota < MIN_QUOTA_US:
        raise BackendError(
            f"refusing cpu.max quota {quota} us for {target}: below kernel minimum "
            f"{MIN_QUOTA_US} us"
        )
    path = _cgroup_path(group, "cpu.max", cgroup_root)
    return CommandPlan(
        (
            PlanStep(
                f'echo "{quota} {CPU_PERIOD_US}" > {path}',
                f"cap {target.service} CPU time to {quota / CPU_PERIOD_US:g} cores",
            ),
        )
    )


def parse_core_list(spec: str) -> list[int]:
    """Parse a cpuset list like "0-7" or "2,5,9" preserving listed order."""
    cores: list[int] = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if "-" in token:
            lo, hi = token.split("-", 1)
            cores.extend(range(int(lo), int(hi) + 1))
        else:
            cores.append(int(token))
    return cores


def render_core_list(cores: list[int]) -> str:
    """Render cores back to cpuset syntax, compressing consecutive runs."""
    if not cores:
        raise ValueError("empty core list")
    parts: list[str] = []
    run_start = prev = cores[0]
    for core in cores[1:] + [None]:  # type: ignore[list-item]
        if core is not None and core == prev + 1:
            prev = core
            continue
        parts.append(str(run_start) if run_start == prev else f"{run_start}-{prev}")
        if core is not None:
            run_start = prev = core
    return ",".join(parts)


def emit_cpuset_commands(
    target: Target,
    level: StressLevel,
    baseline_cores: str,
    group: str,
    cgroup_root: str = "/sys/fs/cgroup",
) -> CommandPlan:
    """Core-count throttle: pin to the first max(1, floor(n*(1-k/100))) cores
    of the baseline list, in listed order."""
    cores = parse_core_list(baseline_cores)
    if not cores:
        raise BackendError(f"empty baseline core list for {target}")
    kept = cores[: max(1, math.floor(len(cores) * level.keep_fraction))]
    path = _cgroup_path(group, "cpuset.cpus", cgroup_root)
    rendered = render_core_list(kept)
    return CommandPlan(
        (
            PlanStep(
                f'echo "{rendered}" > {path}',
                f"pin {target.service} to {len(kept)} of {len(cores)} cores",
            ),
        )
    )


def emit_io_limit_commands(
    target: Target,
    level: StressLevel,
    read_capacity_bps: float,
    write_capacity_bps: float,
    mode: str,
    device: str | None,
    group: str,
    cgroup_root: str = "/sys/fs/cgroup",
) -> CommandPlan:
    """Block-IO throttle: one io.max write "MAJ:MIN rbps=<R> wbps=<W>".

    ``mode`` is READ, WRITE or JOINT; unlimited directions get the literal
    ``max``.  k=0 emits the explicit all-max reset form used by CLEAR.
    """
    if mode not in ("READ", "WRITE", "JOINT"):
        raise ValueError(f"mode must be READ, WRITE or JOINT, got {mode!r}")
    if not device:
        raise BackendError(f"no block device (MAJ:MIN) configured for {target.service}")
    if level.percent == 0:
        rbps, wbps = "max", "max"
    else:
        rbps = (
            str(round(read_capacity_bps * level.keep_fraction))
            if mode in ("READ", "JOINT")
            else "max"
        )
        wbps = (
            str(round(write_capacity_bps * level.keep_fraction))
            if mode in ("WRITE", "JOINT")
            else "max"
        )
    path = _cgroup_path(group, "io.max", cgroup_root)
    return CommandPlan(
        (
            PlanStep(
                f'echo "{device} rbps={rbps} wbps={wbps}" > {path}',
                f"limit {target.service} {mode.lower()} bandwidth on {device}",
            ),
        )
    )


def emit_net_limit_commands(
    target: Target,
    level: StressLevel,
    capacity_kbit: float,
    device: str | None,
) -> CommandPlan:
    """HTB rate limit at (1-k)% of capacity: root qdisc + one default class.

    ``capacity_kbit`` is the probed/configured link maximum in kbit/s; the
    emitted rate is round(capacity * (1-k/100)) kbit/s.
    """
    if not device:
        raise BackendError(f"no network device configured for {target.service}")
    rate = round(capacity_kbit * level.keep_fraction)
    return CommandPlan(
        (
            PlanStep(
                f"tc qdisc replace dev {device} root handle 1: htb default 10",
                f"install HTB root qdisc on {device}",
            ),
            PlanStep(
                f"tc class replace dev {device} parent 1: classid 1:10 htb rate {rate}kbit",
                f"shape {target.service} egress to {rate} kbit/s",
            ),
        )
    )


def emit_net_clear_commands(target: Target, device: str | None) -> CommandPlan:
    if not device:
        raise BackendError(f"no network device configured for {target.service}")
    return CommandPlan(
        (
            PlanStep(
                f"tc qdisc del dev {device} root",
                f"remove HTB shaping from {device}",
            ),
        )
    )


class SimBackend:
    """Applies stress by rewriting the simulator's allocation map in place.

    CLEAR verifies restoration by value equality against the baseline map.
    """

    name = "sim"

    def __init__(self, app: SimApp, allocations: dict[Target, Allocation]):
        self.app = app
        self._allocations = dict(allocations)
        self._baseline = allocation_values(allocations)
        self.current = dict(self._baseline)
        self.active_target: Target | None = None

    def baseline_values(self) -> dict[Target, float]:
        return dict(self._baseline)

    def apply_stress(self, target: Target, level: StressLevel) -> None:
        if self.active_target is not None:
            raise StressStateError(
                f"cannot stress {target}: {self.active_target} is already stressed"
            )
        if target not in self._allocations:
            raise BackendError(f"unknown target {target}")
        self.current[target] = effective_allocation(self._allocations[target], level)
        self.active_target = target

    def clear_stress(self, target: Target) -> None:
        if self.active_target != target:
            raise StressStateError(f"{target} is not currently stressed")
        self.current[target] = self._baseline[target]
        self.active_target = None
        if self.current != self._baseline:
            raise BackendError("allocation map did not restore to baseline")

    def force_clear(self) -> None:
        """Best-effort cleanup used on failure paths; always leaves baseline state."""
        self.current = dict(self._baseline)
        self.active_target = None

    def probe_capacity(self, service: str, resource: ResourceKind) -> float:
        key = Target(service, resource)
        if key not in self._allocations:
            raise BackendError(f"no configured capacity for {key}")
        return self._allocations[key].capacity


def _shell_executor(command: str) -> str:
    proc = subprocess.run(
        command, shell=True, capture_output=True, text=True, timeout=600
    )
    if proc.returncode != 0:
        raise BackendError(
            f"command failed with exit {proc.returncode}: {command}\n{proc.stderr.strip()}"
        )
    return proc.stdout


class CommandBackend:
    """Renders cgroup/tc plans per target and shells them out one at a time.

    In dry-run mode nothing executes; plans are exposed for script emission
    and probing is refused.  A per-service reconfiguration command, when
    configured, runs after every APPLY and CLEAR so services that read their
    limits at startup can be nudged.
    """

    name = "command"

    def __init__(
        self,
        application: ApplicationSpec,
        cgroup_root: str = "/sys/fs/cgroup",
        probe_commands: dict | None = None,
        dry_run: bool = False,
        executor=None,
    ):
        self.application = application
        self.cgroup_root = cgroup_root
        self.probe_commands = dict(probe_commands or {})
        self.dry_run = dry_run
        self._executor = executor or _shell_executor
        self._allocations = application.allocation_map()
        self.active_target: Target | None = None
        self.executed: list[str] = []

    # Plan construction

    def _service(self, name: str) -> ServiceSpec:
        return self.application.service(name)

    def _require(self, value: str | None, what: str, service: str) -> str:
        if not value:
            raise BackendError(f"service {service!r} has no {what} configured")
        return value

    def plan_for(self, action: BackendAction) -> CommandPlan:
        """Render the full plan for an action, reconfiguration hook included."""
        target = action.target
        svc = self._service(target.service)
        alloc = self._allocations.get(target)
        if alloc is None:
            raise BackendError(f"unknown target {target}")
        if action.kind == ActionKind.APPLY:
            if action.level is None:
                raise ValueError("APPLY requires a stress level")
            plan = self._stress_plan(target, svc, alloc, action.level)
        elif action.kind == ActionKind.CLEAR:
            plan = self._clear_plan(target, svc, alloc)
        else:
            raise ValueError(f"no command plan for {action.kind}")
        if svc.reconfigure_command:
            plan = CommandPlan(
                plan.steps
                + (
                    PlanStep(
                        svc.reconfigure_command,
                        f"notify {svc.name} of its new limits",
                    ),
                ),
                plan.dry_run,
            )
        return plan

    def _stress_plan(
        self, target: Target, svc: ServiceSpec, alloc: Allocation, level: StressLevel
    ) -> CommandPlan:
        kind = target.resource
        if kind == ResourceKind.CPU_QUOTA:
            group = self._require(svc.cgroup, "cgroup group", svc.name)
            return emit_cpu_quota_commands(
                target, level, alloc.value, group, self.cgroup_root
            )
        if kind == ResourceKind.CPU_CORES:
            group = self._require(svc.cgroup, "cgroup group", svc.name)
            cores = self._require(svc.cpuset_cores, "cpuset_cores baseline", svc.name)
            return emit_cpuset_commands(target, level, cores, group, self.cgroup_root)
        if kind in (
            ResourceKind.DISK_READ_BW,
            ResourceKind.DISK_WRITE_BW,
            ResourceKind.DISK_RW_BW,
        ):
            group = self._require(svc.cgroup, "cgroup group", svc.name)
            device = self._require(svc.block_device, "block_device (MAJ:MIN)", svc.name)
            mode = {
                ResourceKind.DISK_READ_BW: "READ",
                ResourceKind.DISK_WRITE_BW: "WRITE",
                ResourceKind.DISK_RW_BW: "JOINT",
            }[kind]
            read_cap = svc.disk_read_capacity_bps or alloc.capacity
            write_cap = svc.disk_write_capacity_bps or alloc.capacity
            return emit_io_limit_commands(
                target, level, read_cap, write_cap, mode, device, group, self.cgroup_root
            )
        if kind == ResourceKind.NET_BW:
            device = self._require(svc.net_device, "net_device", svc.name)
            return emit_net_limit_commands(
                target, level, alloc.capacity / 1000.0, device
            )
        raise BackendError(f"unsupported resource kind {kind.name}")

    def _clear_plan(self, target: Target, svc: ServiceSpec, alloc: Allocation) -> CommandPlan:
        if target.resource == ResourceKind.NET_BW:
            device = self._require(svc.net_device, "net_device", svc.name)
            return emit_net_clear_commands(target, device)
        # cgroup kinds: clearing is applying zero stress (the baseline-reset form)
        return self._stress_plan(target, svc, alloc, StressLevel(0))

    # State machine

    def apply_stress(self, target: Target, level: StressLevel) -> None:
        if self.active_target is not None:
            raise StressStateError(
                f"cannot stress {target}: {self.active_target} is already stressed"
            )
        plan = self.plan_for(BackendAction(ActionKind.APPLY, target, level))
        try:
            self._run(plan)
        except BackendError as exc:
            self._rollback(target)
            raise BackendError(f"apply failed, rollback attempted: {exc}") from exc
        self.active_target = target

    def clear_stress(self, target: Target) -> None:
        if self.active_target != target:
            raise StressStateError(f"{target} is not currently stressed")
        plan = self.plan_for(BackendAction(ActionKind.CLEAR, target))
        try:
            self._run(plan)
        finally:
            self.active_target = None

    def force_clear(self) -> None:
        if self.active_target is not None:
            self._rollback(self.active_target)
            self.active_target = None

    def _rollback(self, target: Target) -> None:
        try:
            plan = self.plan_for(BackendAction(ActionKind.CLEAR, target))
            self._run(plan)
        except BackendError:
            pass  # best effort; the trial is already being reported INVALID

    def _run(self, plan: CommandPlan) -> None:
        for step in plan.steps:
            self.executed.append(step.command)
            if not self.dry_run:
                self._executor(step.command)

    def probe_capacity(self, service: str, resource: ResourceKind) -> float:
        if self.dry_run:
            raise BackendError("probe requires execution; disable dry-run to probe")
        template = self.probe_commands.get(resource.name)
        if template is None:
            raise BackendError(f"no probe command configured for {resource.name}")
        out = self._executor(template.format(service=service))
        lines = [l for l in out.strip().splitlines() if l.strip()]
        try:
            measured = float(lines[-1])
        except (IndexError, ValueError):
            raise BackendError(
                f"probe for ({service}, {resource.name}) did not print a number"
            ) from None
        key = Target(service, resource)
        alloc = self._allocations.get(key)
        if alloc is not None and measured < alloc.value:
            logging.getLogger(__name__).warning(
                "probe for %s measured %.6g below the allocation %.6g; clamping",
                key,
                measured,
                alloc.value,
            )
            return alloc.value
        return measured


def trial_script(
    backend: CommandBackend,
    target: Target,
    level: StressLevel,
    index: int,
    repetition: int,
    metric_command: str | None,
) -> str:
    """Render one trial as a standalone shell script: APPLY, metric, CLEAR."""
    apply_plan = backend.plan_for(BackendAction(ActionKind.APPLY, target, level))
    clear_plan = backend.plan_for(BackendAction(ActionKind.CLEAR, target))
    lines = [
        "#!/bin/sh",
        f"# trial {index}: {target.service} {target.resource.name} "
        f"k={level.percent:g} rep={repetition}",
        "set -e",
        "",
    ]
    for step in apply_plan.steps:
        lines.append(f"# {step.effect}")
        lines.append(step.command)
    lines.append("")
    lines.append("# >>> metric command: run the workload and capture the metric <<<")
    lines.append(metric_command if metric_command else ": replace this line with your metric command")
    lines.append("")
    for step in clear_plan.steps:
        lines.append(f"# {step.effect}")
        lines.append(step.command)
    lines.append("")
    return "\n".join(lines)
