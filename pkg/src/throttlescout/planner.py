"""Experiment configuration and throttle-schedule generation.

The config file is a single UTF-8 JSON document with top-level keys
``application``, ``blacklist``, ``stress_levels``, ``repetitions``,
``metric``, ``thresholds``, ``seed`` and ``backend``.  Unknown keys anywhere
are a hard error so typos cannot silently drop settings.

Schedules are pure functions of the config: one trial per non-blacklisted
(target x stress level x repetition), baselines first, trials in lexicographic
(service, resource, level, repetition) order.  Identical configs serialize to
byte-identical schedules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import (
    Allocation,
    ApplicationSpec,
    ConfigError,
    Direction,
    MAX_STRESS_PERCENT,
    MetricSpec,
    ResourceKind,
    ServiceSpec,
    StressLevel,
    Target,
    validate_application_spec,
)
from .simulator import CallPhase, SimApp, SimService, WorkPhase

DEFAULT_STRESS_LEVELS = (20.0, 40.0, 60.0, 80.0)
DEFAULT_REPETITIONS = 3
DEFAULT_IMR_THRESHOLD = 0.10
DEFAULT_PARADOX_EPSILON = 0.05
DEFAULT_METRIC = MetricSpec("latency", Direction.LOWER_IS_BETTER, "s")


@dataclass(frozen=True)
class BlacklistEntry:
    """Exclusion rule: a full target, a whole service, a whole resource kind,
    or every service pinned to a machine."""

    service: str | None = None
    resource: ResourceKind | None = None
    machine: str | None = None

    def matches(self, target: Target, spec: ApplicationSpec) -> bool:
        if self.machine is not None:
            svc = spec.service(target.service)
            return svc.machine == self.machine
        if self.service is not None and self.service != target.service:
            return False
        if self.resource is not None and self.resource != target.resource:
            return False
        return self.service is not None or self.resource is not None


@dataclass(frozen=True)
class BackendSettings:
    """Backend selection plus the knobs that only matter for one backend kind."""

    kind: str = "sim"  # "sim" | "command"
    settle_seconds: float = 0.0
    trial_budget_seconds: float = 0.0
    metric_command: str | None = None
    noise_percent: float = 0.0
    cgroup_root: str = "/sys/fs/cgroup"
    probe_commands: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    application: ApplicationSpec
    blacklist: tuple[BlacklistEntry, ...] = ()
    stress_levels: tuple[StressLevel, ...] = tuple(
        StressLevel(p) for p in DEFAULT_STRESS_LEVELS
    )
    repetitions: int = DEFAULT_REPETITIONS
    metric: MetricSpec = DEFAULT_METRIC
    imr_threshold: float = DEFAULT_IMR_THRESHOLD
    paradox_epsilon: float = DEFAULT_PARADOX_EPSILON
    seed: int = 0
    backend: BackendSettings = field(default_factory=BackendSettings)

    def blacklisted_targets(self) -> set[Target]:
        return {
            t
            for t in self.application.allocation_map()
            if any(e.matches(t, self.application) for e in self.blacklist)
        }

    def active_targets(self) -> list[Target]:
        blocked = self.blacklisted_targets()
        return [t for t in self.application.targets() if t not in blocked]

    def validate(self) -> list[str]:
        violations = validate_application_spec(self.application, self.blacklist)
        if not self.stress_levels:
            violations.append("stress_levels must be nonempty")
        percents = [l.percent for l in self.stress_levels]
        if any(p <= 0 for p in percents):
            violations.append("stress_levels must be strictly positive")
        if sorted(set(percents)) != percents:
            violations.append("stress_levels must be strictly increasing")
        if self.repetitions < 1:
            violations.append("repetitions must be >= 1")
        if not self.imr_threshold > 0:
            violations.append("thresholds.imr_theta must be positive")
        if not self.paradox_epsilon > 0:
            violations.append("thresholds.paradox_epsilon must be positive")
        if self.seed < 0:
            violations.append("seed must be a non-negative integer")
        if self.backend.kind not in ("sim", "command"):
            violations.append(f"backend.kind must be sim or command, got {self.backend.kind!r}")
        return violations

    def canonical_dict(self) -> dict:
        """Stable dict form, hashed into every report's config_digest."""
        return {
            "application": {
                "services": [
                    {
                        "name": s.name,
                        "machine": s.machine,
                        "allocations": [
                            {
                                "resource": a.resource.name,
                                "value": a.value,
                                "capacity": a.capacity,
                            }
                            for a in s.allocations
                        ],
                    }
                    for s in self.application.services
                ],
                "has_simulation": self.application.simulation is not None,
            },
            "blacklist": [
                {"service": e.service, "resource": e.resource.name if e.resource else None,
                 "machine": e.machine}
                for e in self.blacklist
            ],
            "stress_levels": [l.percent for l in self.stress_levels],
            "repetitions": self.repetitions,
            "metric": {
                "name": self.metric.name,
                "direction": self.metric.direction.value,
                "unit": self.metric.unit,
            },
            "thresholds": {
                "imr_theta": self.imr_threshold,
                "paradox_epsilon": self.paradox_epsilon,
            },
            "seed": self.seed,
            "backend": {
                "kind": self.backend.kind,
                "settle_seconds": self.backend.settle_seconds,
                "trial_budget_seconds": self.backend.trial_budget_seconds,
                "metric_command": self.backend.metric_command,
                "noise_percent": self.backend.noise_percent,
            },
        }


@dataclass(frozen=True)
class Trial:
    target: Target
    level: StressLevel
    repetition: int

    def key(self) -> tuple:
        return (
            self.target.service,
            self.target.resource.name,
            self.level.percent,
            self.repetition,
        )


@dataclass(frozen=True)
class Schedule:
    """Baseline repetition indices followed by the ordered trial list."""

    baselines: tuple[int, ...]
    trials: tuple[Trial, ...]

    def to_dict(self) -> dict:
        return {
            "baselines": list(self.baselines),
            "trials": [
                {
                    "service": t.target.service,
                    "resource": t.target.resource.name,
                    "level_percent": t.level.percent,
                    "rep": t.repetition,
                }
                for t in self.trials
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_dict(data: dict) -> "Schedule":
        trials = tuple(
            Trial(
                Target(row["service"], ResourceKind[row["resource"]]),
                StressLevel(row["level_percent"]),
                row["rep"],
            )
            for row in data["trials"]
        )
        return Schedule(tuple(data["baselines"]), trials)


def generate_schedule(cfg: ExperimentConfig) -> Schedule:
    """Expand the config into the full throttle schedule.

    Raises ConfigError when the config is invalid or blacklisting leaves
    nothing to test.
    """
    violations = cfg.validate()
    if violations:
        raise ConfigError(violations)
    targets = cfg.active_targets()
    if not targets:
        raise ConfigError(["nothing to test: every target is blacklisted"])
    trials = tuple(
        Trial(target, level, rep)
        for target in targets
        for level in cfg.stress_levels
        for rep in range(1, cfg.repetitions + 1)
    )
    return Schedule(tuple(range(1, cfg.repetitions + 1)), trials)


def validate_schedule(schedule: Schedule, cfg: ExperimentConfig) -> list[str]:
    """Self-check a schedule against its config before running it.

    Verifies the bijection onto (active target x level x repetition), the
    lexicographic ordering, the baseline block, and blacklist compliance.
    """
    violations: list[str] = []
    expected_baselines = tuple(range(1, cfg.repetitions + 1))
    if schedule.baselines != expected_baselines:
        violations.append(
            f"baselines must be {list(expected_baselines)}, got {list(schedule.baselines)}"
        )

    blocked = cfg.blacklisted_targets()
    expected = {
        (t, level.percent, rep)
        for t in cfg.active_targets()
        for level in cfg.stress_levels
        for rep in range(1, cfg.repetitions + 1)
    }
    seen: set[tuple] = set()
    for trial in schedule.trials:
        key = (trial.target, trial.level.percent, trial.repetition)
        if trial.target in blocked:
            violations.append(f"trial targets blacklisted {trial.target}")
        if key in seen:
            violations.append(
                f"duplicate trial {trial.target} k={trial.level.percent:g} rep={trial.repetition}"
            )
        seen.add(key)
    for missing in sorted(expected - seen, key=lambda k: (k[0], k[1], k[2])):
        violations.append(
            f"missing trial {missing[0]} k={missing[1]:g} rep={missing[2]}"
        )
    for extra in sorted(seen - expected, key=lambda k: (k[0], k[1], k[2])):
        if extra[0] not in blocked:
            violations.append(
                f"unexpected trial {extra[0]} k={extra[1]:g} rep={extra[2]}"
            )

    keys = [t.key() for t in schedule.trials]
    if keys != sorted(keys):
        violations.append("trials are not in (service, resource, level, rep) order")
    return violations


# Config file parsing.

_TOP_LEVEL_KEYS = {
    "application",
    "blacklist",
    "stress_levels",
    "repetitions",
    "metric",
    "thresholds",
    "seed",
    "backend",
}
_SERVICE_KEYS = {
    "name",
    "machine",
    "allocations",
    "cgroup",
    "net_device",
    "block_device",
    "cpuset_cores",
    "disk_read_capacity_bps",
    "disk_write_capacity_bps",
    "reconfigure_command",
}
_ALLOCATION_KEYS = {"resource", "value", "capacity"}
_APPLICATION_KEYS = {"services", "simulation"}
_METRIC_KEYS = {"name", "direction", "unit"}
_THRESHOLD_KEYS = {"imr_theta", "paradox_epsilon"}
_BACKEND_KEYS = {
    "kind",
    "settle_seconds",
    "trial_budget_seconds",
    "metric_command",
    "noise_percent",
    "cgroup_root",
    "probe_commands",
}
_BLACKLIST_KEYS = {"service", "resource", "machine"}
_SIM_SERVICE_KEYS = {"name", "parallelism", "phases"}
_PHASE_KEYS = {"type", "resource", "demand", "callee"}
_SIM_KEYS = {"root", "services"}


def _reject_unknown(obj: dict, allowed: set[str], where: str, errors: list[str]) -> None:
    for key in obj:
        if key not in allowed:
            errors.append(f"{where}: unknown key {key!r}")


def _parse_resource(name: object, where: str, errors: list[str]) -> ResourceKind | None:
    try:
        return ResourceKind[str(name)]
    except KeyError:
        options = ", ".join(r.name for r in ResourceKind)
        errors.append(f"{where}: unknown resource {name!r} (expected one of {options})")
        return None


def _parse_simulation(data: dict, errors: list[str]) -> SimApp | None:
    _reject_unknown(data, _SIM_KEYS, "application.simulation", errors)
    services = []
    for i, row in enumerate(data.get("services", [])):
        where = f"application.simulation.services[{i}]"
        _reject_unknown(row, _SIM_SERVICE_KEYS, where, errors)
        phases: list = []
        for j, ph in enumerate(row.get("phases", [])):
            ph_where = f"{where}.phases[{j}]"
            _reject_unknown(ph, _PHASE_KEYS, ph_where, errors)
            kind = ph.get("type")
            if kind == "work":
                res = _parse_resource(ph.get("resource"), ph_where, errors)
                if res is not None:
                    phases.append(WorkPhase(res, float(ph.get("demand", 0))))
            elif kind == "call":
                phases.append(CallPhase(str(ph.get("callee", ""))))
            else:
                errors.append(f"{ph_where}: type must be 'work' or 'call', got {kind!r}")
        services.append(
            SimService(str(row.get("name", "")), tuple(phases), int(row.get("parallelism", 1)))
        )
    root = str(data.get("root", ""))
    if errors:
        return None
    return SimApp(tuple(services), root)


def _parse_application(data: object, errors: list[str]) -> ApplicationSpec:
    if not isinstance(data, dict):
        errors.append("application: must be an object")
        return ApplicationSpec(())
    _reject_unknown(data, _APPLICATION_KEYS, "application", errors)
    services = []
    for i, row in enumerate(data.get("services", [])):
        where = f"application.services[{i}]"
        if not isinstance(row, dict):
            errors.append(f"{where}: must be an object")
            continue
        _reject_unknown(row, _SERVICE_KEYS, where, errors)
        name = str(row.get("name", ""))
        allocations = []
        for j, arow in enumerate(row.get("allocations", [])):
            a_where = f"{where}.allocations[{j}]"
            _reject_unknown(arow, _ALLOCATION_KEYS, a_where, errors)
            res = _parse_resource(arow.get("resource"), a_where, errors)
            if res is None:
                continue
            try:
                value = float(arow["value"])
            except (KeyError, TypeError, ValueError):
                errors.append(f"{a_where}: value must be a number")
                continue
            capacity = float(arow.get("capacity", value))
            allocations.append(Allocation(name, res, value, capacity))
        services.append(
            ServiceSpec(
                name=name,
                allocations=tuple(allocations),
                machine=row.get("machine"),
                cgroup=row.get("cgroup"),
                net_device=row.get("net_device"),
                block_device=row.get("block_device"),
                cpuset_cores=row.get("cpuset_cores"),
                disk_read_capacity_bps=row.get("disk_read_capacity_bps"),
                disk_write_capacity_bps=row.get("disk_write_capacity_bps"),
                reconfigure_command=row.get("reconfigure_command"),
            )
        )
    simulation = None
    if isinstance(data.get("simulation"), dict):
        simulation = _parse_simulation(data["simulation"], errors)
    return ApplicationSpec(tuple(services), simulation)


def _parse_blacklist(data: object, errors: list[str]) -> tuple[BlacklistEntry, ...]:
    entries = []
    if data is None:
        return ()
    if not isinstance(data, list):
        errors.append("blacklist: must be a list")
        return ()
    for i, row in enumerate(data):
        where = f"blacklist[{i}]"
        if not isinstance(row, dict):
            errors.append(f"{where}: must be an object")
            continue
        _reject_unknown(row, _BLACKLIST_KEYS, where, errors)
        res = None
        if row.get("resource") is not None:
            res = _parse_resource(row["resource"], where, errors)
        entry = BlacklistEntry(row.get("service"), res, row.get("machine"))
        if entry.service is None and entry.resource is None and entry.machine is None:
            errors.append(f"{where}: must name a service, resource, or machine")
            continue
        entries.append(entry)
    return tuple(entries)


def parse_config(raw: dict) -> ExperimentConfig:
    """Build a validated ExperimentConfig from a decoded JSON document."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])
    _reject_unknown(raw, _TOP_LEVEL_KEYS, "config", errors)

    if "application" not in raw:
        errors.append("config: missing required key 'application'")
    application = _parse_application(raw.get("application", {}), errors)
    blacklist = _parse_blacklist(raw.get("blacklist"), errors)

    levels: tuple[StressLevel, ...] = tuple(StressLevel(p) for p in DEFAULT_STRESS_LEVELS)
    if "stress_levels" in raw:
        parsed_levels = []
        for i, p in enumerate(raw["stress_levels"]):
            try:
                parsed_levels.append(StressLevel(float(p)))
            except (TypeError, ValueError) as exc:
                errors.append(f"stress_levels[{i}]: {exc}")
        levels = tuple(parsed_levels)

    metric = DEFAULT_METRIC
    if "metric" in raw:
        m = raw["metric"]
        if not isinstance(m, dict):
            errors.append("metric: must be an object")
        else:
            _reject_unknown(m, _METRIC_KEYS, "metric", errors)
            direction = DEFAULT_METRIC.direction
            try:
                direction = Direction(m.get("direction", direction.value))
            except ValueError:
                errors.append(
                    f"metric.direction: must be LOWER_IS_BETTER or HIGHER_IS_BETTER, "
                    f"got {m.get('direction')!r}"
                )
            metric = MetricSpec(
                str(m.get("name", DEFAULT_METRIC.name)), direction, str(m.get("unit", ""))
            )

    theta, epsilon = DEFAULT_IMR_THRESHOLD, DEFAULT_PARADOX_EPSILON
    if "thresholds" in raw:
        t = raw["thresholds"]
        if not isinstance(t, dict):
            errors.append("thresholds: must be an object")
        else:
            _reject_unknown(t, _THRESHOLD_KEYS, "thresholds", errors)
            theta = float(t.get("imr_theta", theta))
            epsilon = float(t.get("paradox_epsilon", epsilon))

    backend = BackendSettings()
    if "backend" in raw:
        b = raw["backend"]
        if isinstance(b, str):
            b = {"kind": b}
        if not isinstance(b, dict):
            errors.append("backend: must be a string or an object")
            b = {}
        _reject_unknown(b, _BACKEND_KEYS, "backend", errors)
        kind = str(b.get("kind", "sim"))
        backend = BackendSettings(
            kind=kind,
            settle_seconds=float(
                b.get("settle_seconds", 5.0 if kind == "command" else 0.0)
            ),
            trial_budget_seconds=float(
                b.get("trial_budget_seconds", 60.0 if kind == "command" else 0.0)
            ),
            metric_command=b.get("metric_command"),
            noise_percent=float(b.get("noise_percent", 0.0)),
            cgroup_root=str(b.get("cgroup_root", "/sys/fs/cgroup")),
            probe_commands=dict(b.get("probe_commands", {})),
        )

    repetitions = DEFAULT_REPETITIONS
    if "repetitions" in raw:
        try:
            repetitions = int(raw["repetitions"])
        except (TypeError, ValueError):
            errors.append(f"repetitions: must be an integer, got {raw['repetitions']!r}")

    seed = 0
    if "seed" in raw:
        try:
            seed = int(raw["seed"])
        except (TypeError, ValueError):
            errors.append(f"seed: must be an integer, got {raw['seed']!r}")

    if errors:
        raise ConfigError(errors)

    cfg = ExperimentConfig(
        application=application,
        blacklist=blacklist,
        stress_levels=levels,
        repetitions=repetitions,
        metric=metric,
        imr_threshold=theta,
        paradox_epsilon=epsilon,
        seed=seed,
        backend=backend,
    )
    violations = cfg.validate()
    if violations:
        raise ConfigError(violations)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Read, parse and validate a config file.

    Raises ConfigError with line/field context on parse errors and the full
    violation list on validation errors.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            [f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]
        ) from exc
    return parse_config(raw)


def apply_overrides(
    cfg: ExperimentConfig,
    levels: list[float] | None = None,
    repetitions: int | None = None,
    theta: float | None = None,
    epsilon: float | None = None,
    seed: int | None = None,
    backend_kind: str | None = None,
) -> ExperimentConfig:
    """Apply CLI overrides; the result re-validates and feeds config_digest."""
    changes: dict = {}
    if levels is not None:
        changes["stress_levels"] = tuple(StressLevel(p) for p in levels)
    if repetitions is not None:
        changes["repetitions"] = repetitions
    if theta is not None:
        changes["imr_threshold"] = theta
    if epsilon is not None:
        changes["paradox_epsilon"] = epsilon
    if seed is not None:
        changes["seed"] = seed
    if backend_kind is not None:
        changes["backend"] = replace(cfg.backend, kind=backend_kind)
    if not changes:
        return cfg
    out = replace(cfg, **changes)
    violations = out.validate()
    if violations:
        raise ConfigError(violations)
    return out
