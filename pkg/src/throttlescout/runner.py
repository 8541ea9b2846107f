"""Schedule execution against a backend and a metric source.

Trials never run concurrently: stresses are applied one at a time so every
degradation is attributable to a single variable.  Each record is appended to
``results.jsonl`` before the next trial starts, so an interrupted run resumes
at trial granularity without re-executing anything already logged.
"""

from __future__ import annotations

import json
import random
import statistics
import subprocess
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .core import ConfigError, MetricSpec, ResourceKind, StressLevel, Target
from .planner import ExperimentConfig, Schedule, Trial, validate_schedule
from .simulator import simulate_metric

OK = "OK"
INVALID = "INVALID"


class MetricError(RuntimeError):
    """The metric source failed to produce a usable number."""


@dataclass(frozen=True)
class MeasurementRecord:
    """One logged measurement; ``target`` is None for baseline runs.

    INVALID records carry a reason and are excluded from analysis.
    """

    target: Target | None
    level: StressLevel | None
    rep: int
    metric_value: float | None
    status: str
    reason: str | None
    started_at: str
    ended_at: str
    backend: str

    @property
    def is_baseline(self) -> bool:
        return self.target is None

    def to_row(self) -> dict:
        return {
            "target_service": self.target.service if self.target else None,
            "target_resource": self.target.resource.name if self.target else None,
            "level_percent": self.level.percent if self.level else 0.0,
            "rep": self.rep,
            "metric_value": self.metric_value,
            "status": self.status,
            "reason": self.reason,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "backend": self.backend,
        }

    @staticmethod
    def from_row(row: dict) -> "MeasurementRecord":
        target = None
        level = None
        if row.get("target_service") is not None:
            target = Target(row["target_service"], ResourceKind[row["target_resource"]])
            level = StressLevel(float(row["level_percent"]))
        return MeasurementRecord(
            target=target,
            level=level,
            rep=int(row["rep"]),
            metric_value=row.get("metric_value"),
            status=row.get("status", INVALID),
            reason=row.get("reason"),
            started_at=row.get("started_at", ""),
            ended_at=row.get("ended_at", ""),
            backend=row.get("backend", ""),
        )


def read_results(path: str | Path) -> list[MeasurementRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(MeasurementRecord.from_row(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise MetricError(f"{path}:{i}: unreadable result row: {exc}") from exc
    return records


class SimulatedSource:
    """Measures the simulator under the backend's current allocation map.

    The optional multiplicative noise (uniform within +/- noise_percent,
    seeded) exists solely to exercise repetition aggregation; the model
    itself is deterministic.
    """

    def __init__(self, backend, metric: MetricSpec, noise_percent: float = 0.0, seed: int = 0):
        self.backend = backend
        self.metric = metric
        self.noise_percent = noise_percent
        self._rng = random.Random(seed)

    def measure(self) -> float:
        value = simulate_metric(self.backend.app, self.backend.current, self.metric)
        if self.noise_percent:
            span = self.noise_percent / 100.0
            value *= 1.0 + self._rng.uniform(-span, span)
        return value


class CommandSource:
    """Runs a shell command whose stdout's last line is the metric value."""

    def __init__(self, command: str, timeout: float | None = None):
        if not command:
            raise ValueError("metric command must be nonempty")
        self.command = command
        self.timeout = timeout

    def measure(self) -> float:
        try:
            proc = subprocess.run(
                self.command,
                shell=True,
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise MetricError(f"metric command timed out after {exc.timeout}s") from exc
        if proc.returncode != 0:
            raise MetricError(
                f"metric command exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        lines = [l for l in proc.stdout.strip().splitlines() if l.strip()]
        if not lines:
            raise MetricError("metric command printed no output")
        try:
            return float(lines[-1])
        except ValueError:
            raise MetricError(
                f"metric command's last output line is not a number: {lines[-1]!r}"
            ) from None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def aggregate_repetitions(records: list[MeasurementRecord]) -> float:
    """Median of the OK metric values; even counts take the lower median so
    the result is always an observed value."""
    values = [r.metric_value for r in records if r.status == OK and r.metric_value is not None]
    if not values:
        raise MetricError("no OK records to aggregate")
    return statistics.median_low(values)


def run_trial(trial: Trial, backend, source, backend_name: str | None = None) -> MeasurementRecord:
    """Execute one trial: apply stress, measure, clear.

    Stress is cleared even when the metric source fails; apply failures
    short-circuit the measurement.  Failures yield an INVALID record.
    """
    name = backend_name or getattr(backend, "name", "unknown")
    started = _now()
    try:
        backend.apply_stress(trial.target, trial.level)
    except Exception as exc:
        return MeasurementRecord(
            trial.target, trial.level, trial.repetition, None, INVALID,
            f"apply failed: {exc}", started, _now(), name,
        )

    value: float | None = None
    reason: str | None = None
    try:
        value = source.measure()
    except MetricError as exc:
        reason = f"metric failed: {exc}"
    finally:
        try:
            backend.clear_stress(trial.target)
        except Exception as exc:
            reason = (reason + "; " if reason else "") + f"clear failed: {exc}"
            force = getattr(backend, "force_clear", None)
            if force:
                force()

    if reason is not None:
        return MeasurementRecord(
            trial.target, trial.level, trial.repetition, None, INVALID,
            reason, started, _now(), name,
        )
    return MeasurementRecord(
        trial.target, trial.level, trial.repetition, value, OK,
        None, started, _now(), name,
    )


def _run_baseline(rep: int, source, name: str) -> MeasurementRecord:
    started = _now()
    try:
        value = source.measure()
    except MetricError as exc:
        return MeasurementRecord(
            None, None, rep, None, INVALID, f"metric failed: {exc}", started, _now(), name
        )
    return MeasurementRecord(None, None, rep, value, OK, None, started, _now(), name)


def _done_keys(records: list[MeasurementRecord]) -> set[tuple]:
    done = set()
    for r in records:
        if r.is_baseline:
            done.add(("BASELINE", r.rep))
        else:
            done.add((r.target.service, r.target.resource.name, r.level.percent, r.rep))
    return done


def run_experiment(
    cfg: ExperimentConfig,
    schedule: Schedule,
    backend,
    source,
    results_path: str | Path | None = None,
    progress=None,
) -> list[MeasurementRecord]:
    """Run baselines then trials strictly in schedule order.

    Appends each record to ``results_path`` before starting the next trial;
    records already present there are never re-executed.  Backend or metric
    failures mark the trial INVALID and the run continues.
    """
    violations = validate_schedule(schedule, cfg)
    if violations:
        raise ConfigError(violations)

    existing: list[MeasurementRecord] = []
    if results_path is not None and Path(results_path).exists():
        existing = read_results(results_path)
    done = _done_keys(existing)
    records = list(existing)
    name = getattr(backend, "name", "unknown")
    settle = cfg.backend.settle_seconds

    log = open(results_path, "a", encoding="utf-8") if results_path is not None else None
    try:
        def emit(record: MeasurementRecord) -> None:
            records.append(record)
            if log is not None:
                log.write(json.dumps(record.to_row(), sort_keys=True) + "\n")
                log.flush()
            if progress is not None:
                progress(record)

        for rep in schedule.baselines:
            if ("BASELINE", rep) in done:
                continue
            emit(_run_baseline(rep, source, name))

        ran_one = False
        for trial in schedule.trials:
            key = (
                trial.target.service,
                trial.target.resource.name,
                trial.level.percent,
                trial.repetition,
            )
            if key in done:
                continue
            if ran_one and settle > 0:
                time.sleep(settle)
            emit(run_trial(trial, backend, source, name))
            ran_one = True
    finally:
        if log is not None:
            log.close()
        if getattr(backend, "active_target", None) is not None:
            force = getattr(backend, "force_clear", None)
            if force:
                force()

    return records
