"""From raw measurements to a ranked bottleneck report.

Degradation is relative to baseline rather than absolute: relative change is
the only scale-free way to compare across metrics, and it leaves rank order
untouched.  Candidates are ranked by their degradation at the highest stress
level shared by all targets; per-level curves, an area-under-curve ordering,
IMR classification, MIMR/co-IMR selection and paradox detection all come
along in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .core import Direction, MetricSpec, Target
from .runner import OK, MeasurementRecord, MetricError, aggregate_repetitions

# Throttle-based inference has a documented blind spot: a resource can pay off
# when provisioned even though throttling it showed no degradation.  Every
# report says so, and `validate` quantifies the gap on simulated apps.
ABSENCE_CAVEAT = (
    "absence from the IMR set is not proof of no benefit: provisioning a "
    "resource can improve performance even when throttling it showed no "
    "degradation; 'validate' quantifies this gap on simulated apps"
)


class AnalysisError(RuntimeError):
    pass


class MissingBaselineError(AnalysisError):
    """Results contain no usable baseline measurement."""


@dataclass(frozen=True)
class DegradationRecord:
    """Signed relative metric change for one (target, level); positive = worse."""

    target: Target
    level_percent: float
    degradation: float


@dataclass(frozen=True)
class Candidate:
    target: Target
    curve: dict  # level percent -> degradation
    rank: int
    rank_d: float  # degradation at the ranking level
    auc: float
    rank_by_auc: int


@dataclass(frozen=True)
class Paradox:
    target: Target
    level_percent: float
    degradation: float


@dataclass(frozen=True)
class ImrReport:
    baseline: float
    metric: MetricSpec
    theta: float
    epsilon: float
    rank_level: float | None
    candidates: tuple[Candidate, ...]
    imr_set: tuple[Target, ...]
    mimr: Target | None
    co_imrs: tuple[Target, ...]
    paradoxes: tuple[Paradox, ...]
    missing_cells: tuple[str, ...]
    invalid_count: int
    caveats: tuple[str, ...]
    config_digest: str = ""


def compute_degradation(baseline: float, stressed: float, direction: Direction) -> float:
    """Relative degradation, direction-normalized so positive always means worse."""
    if baseline <= 0:
        raise ValueError(f"baseline must be positive, got {baseline!r}")
    if direction == Direction.HIGHER_IS_BETTER:
        return (baseline - stressed) / baseline
    return (stressed - baseline) / baseline


def rank_candidates(cells: dict[Target, float]) -> list[tuple[Target, float]]:
    """Descending by degradation; ties break lexicographically by (service, resource)."""
    return sorted(cells.items(), key=lambda kv: (-kv[1], kv[0]))


def classify_imrs(ranked: list[tuple[Target, float]], theta: float) -> list[Target]:
    """Targets whose ranking-level degradation reaches theta, in rank order."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta!r}")
    return [t for t, d in ranked if d >= theta]


def select_mimr(
    imr_set: list[Target], curves: dict[Target, dict[float, float]]
) -> tuple[Target | None, list[Target]]:
    """Pick the maximal IMR, or declare co-IMRs when the top two cross.

    Returns (mimr, co_imrs): the top-ranked IMR when it dominates the runner-up
    at every shared stress level, otherwise (None, [top, runner_up]) because a
    crossing means the ordering depends on how hard you throttle.  An empty
    imr_set is the "no IMR found" outcome (None, []).
    """
    if not imr_set:
        return None, []
    if len(imr_set) == 1:
        return imr_set[0], []
    top, runner_up = imr_set[0], imr_set[1]
    shared = sorted(set(curves.get(top, {})) & set(curves.get(runner_up, {})))
    crossing = any(curves[runner_up][lvl] > curves[top][lvl] for lvl in shared)
    if crossing:
        return None, [top, runner_up]
    return top, []


def detect_paradoxes(
    curves: dict[Target, dict[float, float]], epsilon: float
) -> list[Paradox]:
    """Targets whose stress improved the metric beyond the noise band.

    A target is paradoxical when any level's degradation is <= -epsilon; it is
    annotated with its most negative level.  Most paradoxical first.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    found = []
    for target in sorted(curves):
        curve = curves[target]
        if not curve:
            continue
        level = min(sorted(curve), key=lambda lvl: curve[lvl])
        if curve[level] <= -epsilon:
            found.append(Paradox(target, level, curve[level]))
    found.sort(key=lambda p: (p.degradation, p.target))
    return found


def _area_under_curve(curve: dict[float, float]) -> float:
    """Mean degradation height across levels (trapezoid / span); a single
    point is its own value.  Exposed as the alternate ordering in the JSON."""
    levels = sorted(curve)
    if len(levels) == 1:
        return curve[levels[0]]
    area = 0.0
    for lo, hi in zip(levels, levels[1:]):
        area += (curve[lo] + curve[hi]) / 2.0 * (hi - lo)
    return area / (levels[-1] - levels[0])


def build_report(
    records: list[MeasurementRecord],
    metric: MetricSpec,
    theta: float,
    epsilon: float,
    config_digest: str = "",
) -> ImrReport:
    """Aggregate repetitions, compute degradations, rank, classify, flag."""
    baseline_records = [r for r in records if r.is_baseline]
    trial_records = [r for r in records if not r.is_baseline]
    invalid_count = sum(1 for r in records if r.status != OK)

    try:
        baseline = aggregate_repetitions(baseline_records)
    except MetricError:
        raise MissingBaselineError(
            "results contain no OK baseline record; run the experiment first"
        ) from None
    if baseline <= 0:
        raise AnalysisError(f"aggregated baseline must be positive, got {baseline!r}")

    by_cell: dict[tuple[Target, float], list[MeasurementRecord]] = {}
    for r in trial_records:
        by_cell.setdefault((r.target, r.level.percent), []).append(r)

    curves: dict[Target, dict[float, float]] = {}
    missing: list[str] = []
    for (target, level), cell_records in sorted(by_cell.items()):
        try:
            stressed = aggregate_repetitions(cell_records)
        except MetricError:
            missing.append(f"{target} at k={level:g}%: no OK measurement")
            continue
        curves.setdefault(target, {})[level] = compute_degradation(
            baseline, stressed, metric.direction
        )

    caveats = [ABSENCE_CAVEAT]
    rank_level: float | None = None
    rank_cells: dict[Target, float] = {}
    if curves:
        common = set.intersection(*(set(c) for c in curves.values()))
        if common:
            rank_level = max(common)
            rank_cells = {t: c[rank_level] for t, c in curves.items()}
        else:
            caveats.append(
                "no stress level is shared by all targets; each target is "
                "ranked at its own maximum measured level"
            )
            rank_cells = {t: c[max(c)] for t, c in curves.items()}

    ranked = rank_candidates(rank_cells)
    imr_list = classify_imrs(ranked, theta)
    mimr, co_imrs = select_mimr(imr_list, curves)

    imr_members = set(imr_list)
    paradoxes = tuple(
        p for p in detect_paradoxes(curves, epsilon) if p.target not in imr_members
    )

    auc_order = sorted(
        curves, key=lambda t: (-_area_under_curve(curves[t]), t)
    )
    auc_rank = {t: i + 1 for i, t in enumerate(auc_order)}

    candidates = tuple(
        Candidate(
            target=t,
            curve=dict(sorted(curves[t].items())),
            rank=i + 1,
            rank_d=d,
            auc=_area_under_curve(curves[t]),
            rank_by_auc=auc_rank[t],
        )
        for i, (t, d) in enumerate(ranked)
    )

    if missing:
        caveats.append(f"{len(missing)} cell(s) have no OK measurement and were skipped")
    if invalid_count:
        caveats.append(f"{invalid_count} INVALID record(s) were excluded from analysis")

    return ImrReport(
        baseline=baseline,
        metric=metric,
        theta=theta,
        epsilon=epsilon,
        rank_level=rank_level,
        candidates=candidates,
        imr_set=tuple(imr_list),
        mimr=mimr,
        co_imrs=tuple(co_imrs),
        paradoxes=paradoxes,
        missing_cells=tuple(missing),
        invalid_count=invalid_count,
        caveats=tuple(caveats),
        config_digest=config_digest,
    )


def _fmt_level(level: float) -> str:
    return f"{level:g}"


def _target_dict(target: Target) -> dict:
    return {"service": target.service, "resource": target.resource.name}


def report_to_dict(report: ImrReport) -> dict:
    return {
        "baseline": report.baseline,
        "metric": {
            "name": report.metric.name,
            "direction": report.metric.direction.value,
            "unit": report.metric.unit,
        },
        "thresholds": {"imr_theta": report.theta, "paradox_epsilon": report.epsilon},
        "rank_level_percent": report.rank_level,
        "candidates": [
            {
                "service": c.target.service,
                "resource": c.target.resource.name,
                "curve": {_fmt_level(lvl): d for lvl, d in c.curve.items()},
                "rank": c.rank,
                "degradation_at_rank_level": c.rank_d,
                "auc": c.auc,
                "rank_by_auc": c.rank_by_auc,
            }
            for c in report.candidates
        ],
        "imr_set": [_target_dict(t) for t in report.imr_set],
        "mimr": _target_dict(report.mimr) if report.mimr else None,
        "co_imrs": [_target_dict(t) for t in report.co_imrs],
        "paradoxes": [
            {
                "service": p.target.service,
                "resource": p.target.resource.name,
                "level_percent": p.level_percent,
                "degradation": p.degradation,
            }
            for p in report.paradoxes
        ],
        "missing_cells": list(report.missing_cells),
        "invalid_count": report.invalid_count,
        "caveats": list(report.caveats),
        "config_digest": report.config_digest,
    }


def render_report(report: ImrReport) -> tuple[str, str]:
    """Render (canonical JSON, plain-text table); byte-deterministic."""
    json_text = json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"

    direction_words = (
        "lower is better"
        if report.metric.direction == Direction.LOWER_IS_BETTER
        else "higher is better"
    )
    unit = f" ({report.metric.unit})" if report.metric.unit else ""
    lines = [
        "throttle degradation report",
        "===========================",
        f"metric: {report.metric.name}{unit}, {direction_words}",
        f"baseline: {report.baseline:g}",
        f"thresholds: theta={report.theta:g} epsilon={report.epsilon:g}",
    ]
    if report.rank_level is not None:
        lines.append(f"ranked at stress level: {_fmt_level(report.rank_level)}%")
    if report.config_digest:
        lines.append(f"config digest: {report.config_digest}")
    lines.append("")

    if not report.candidates:
        lines.append("no measurable candidates.")
    else:
        imr_members = set(report.imr_set)
        co_members = set(report.co_imrs)
        width = max(len(f"{c.target.service}/{c.target.resource.name}") for c in report.candidates)
        width = max(width, len("target"))
        lines.append(f"rank  {'target'.ljust(width)}  degradation  flags")
        shown = report.candidates
        if not report.imr_set:
            shown = report.candidates[:3]
        for c in shown:
            flags = []
            if c.target in imr_members:
                flags.append("IMR")
            if report.mimr == c.target:
                flags.append("MIMR")
            if c.target in co_members:
                flags.append("co-IMR")
            name = f"{c.target.service}/{c.target.resource.name}"
            lines.append(
                f"{c.rank:4d}  {name.ljust(width)}  {c.rank_d:+11.4f}  {' '.join(flags)}".rstrip()
            )
        if not report.imr_set:
            lines.append("")
            lines.append(
                f"no IMRs: no target's degradation reached theta={report.theta:g}; "
                "top 3 candidates shown above."
            )

    if report.mimr is not None:
        lines.append("")
        lines.append(f"MIMR: {report.mimr.service}/{report.mimr.resource.name}")
    elif report.co_imrs:
        pair = ", ".join(f"{t.service}/{t.resource.name}" for t in report.co_imrs)
        lines.append("")
        lines.append(
            f"co-IMRs: {pair} (degradation ordering flips across stress levels; "
            "no unique MIMR)"
        )

    if report.paradoxes:
        lines.append("")
        lines.append("paradoxical (improved under stress):")
        for p in report.paradoxes:
            lines.append(
                f"  {p.target.service}/{p.target.resource.name}  "
                f"D={p.degradation:+.4f} at k={_fmt_level(p.level_percent)}%"
            )

    lines.append("")
    lines.append("caveats:")
    for caveat in report.caveats:
        lines.append(f"  - {caveat}")
    lines.append("")
    return json_text, "\n".join(lines)
