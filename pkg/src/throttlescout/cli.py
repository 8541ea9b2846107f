"""Operator entry point: plan, run, report, validate, emit-scripts.

Every subcommand is deterministic given (config bytes, results bytes, seed),
never mutates the config file, and uses the stable exit-code contract:
0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import random
import sys
from pathlib import Path

from .analysis import MissingBaselineError, build_report, render_report
from .backends import (
    ActionKind,
    BackendAction,
    BackendError,
    CommandBackend,
    SimBackend,
    trial_script,
)
from .core import (
    Allocation,
    ApplicationSpec,
    ConfigError,
    Direction,
    MetricSpec,
    ServiceSpec,
    Target,
)
from .planner import (
    ExperimentConfig,
    Schedule,
    apply_overrides,
    generate_schedule,
    load_config,
)
from .runner import (
    INVALID,
    CommandSource,
    MetricError,
    SimulatedSource,
    read_results,
    run_experiment,
)
from .simulator import DAG, SERIES, brute_force_ranking, generate_random_app

VALIDATE_PROVISION_FACTOR = 1.0


def config_digest(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.canonical_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _parse_levels(csv: str) -> list[float]:
    try:
        return [float(part) for part in csv.split(",") if part.strip()]
    except ValueError:
        raise ConfigError([f"--levels must be a CSV of numbers, got {csv!r}"]) from None


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return apply_overrides(
        cfg,
        levels=_parse_levels(args.levels) if args.levels else None,
        repetitions=args.reps,
        theta=args.theta,
        epsilon=args.epsilon,
        seed=args.seed,
        backend_kind=args.backend,
    )


def _sim_backend(cfg: ExperimentConfig) -> SimBackend:
    if cfg.application.simulation is None:
        raise ConfigError(
            ["backend 'sim' requires application.simulation in the config"]
        )
    return SimBackend(cfg.application.simulation, cfg.application.allocation_map())


def _command_backend(cfg: ExperimentConfig, dry_run: bool = False) -> CommandBackend:
    return CommandBackend(
        cfg.application,
        cgroup_root=cfg.backend.cgroup_root,
        probe_commands=cfg.backend.probe_commands,
        dry_run=dry_run,
    )


def _make_backend_and_source(cfg: ExperimentConfig):
    if cfg.backend.kind == "sim":
        backend = _sim_backend(cfg)
        source = SimulatedSource(
            backend, cfg.metric, cfg.backend.noise_percent, cfg.seed
        )
        return backend, source
    if not cfg.backend.metric_command:
        raise ConfigError(
            ["backend 'command' requires backend.metric_command in the config"]
        )
    backend = _command_backend(cfg)
    budget = cfg.backend.trial_budget_seconds or None
    return backend, CommandSource(cfg.backend.metric_command, timeout=budget)


def _load_or_generate_schedule(cfg: ExperimentConfig, out: Path) -> Schedule:
    schedule_path = out / "schedule.json"
    if schedule_path.exists():
        return Schedule.from_dict(json.loads(schedule_path.read_text(encoding="utf-8")))
    schedule = generate_schedule(cfg)
    out.mkdir(parents=True, exist_ok=True)
    schedule_path.write_text(schedule.to_json(), encoding="utf-8")
    return schedule


def cmd_plan(args) -> int:
    cfg = _load(args)
    schedule = generate_schedule(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "schedule.json"
    path.write_text(schedule.to_json(), encoding="utf-8")
    total_runs = len(schedule.baselines) + len(schedule.trials)
    budget = cfg.backend.trial_budget_seconds
    print(f"wrote {path}")
    print(f"{len(schedule.trials)} trials after {len(schedule.baselines)} baseline run(s)")
    print(f"estimated duration: {total_runs * budget:g} s "
          f"({total_runs} runs x {budget:g} s budget)")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.dry_run:
        return _emit_scripts(cfg, out)

    lock_path = out / ".lock"
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        print(
            f"another run holds {lock_path}; remove it if no run is active",
            file=sys.stderr,
        )
        return 1
    try:
        schedule = _load_or_generate_schedule(cfg, out)
        backend, source = _make_backend_and_source(cfg)
        results_path = out / "results.jsonl"

        def progress(record):
            if record.is_baseline:
                what = f"baseline rep {record.rep}"
            else:
                what = (
                    f"{record.target.service}/{record.target.resource.name} "
                    f"k={record.level.percent:g} rep {record.rep}"
                )
            value = "-" if record.metric_value is None else f"{record.metric_value:g}"
            print(f"[{record.status}] {what}: {value}")

        records = run_experiment(
            cfg, schedule, backend, source, results_path, progress=progress
        )
    finally:
        os.close(lock_fd)
        lock_path.unlink(missing_ok=True)

    trial_records = [r for r in records if not r.is_baseline]
    invalid = [r for r in trial_records if r.status == INVALID]
    print(f"wrote {out / 'results.jsonl'} "
          f"({len(records)} records, {len(invalid)} invalid)")
    if trial_records and len(invalid) == len(trial_records):
        print("every trial is INVALID; nothing to analyze", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    results_path = out / "results.jsonl"
    if not results_path.exists():
        raise MissingBaselineError(f"{results_path} does not exist; run first")
    records = read_results(results_path)
    report = build_report(
        records,
        cfg.metric,
        cfg.imr_threshold,
        cfg.paradox_epsilon,
        config_digest=config_digest(cfg),
    )
    json_text, text = render_report(report)
    (out / "report.json").write_text(json_text, encoding="utf-8")
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text)
    print(f"wrote {out / 'report.json'} and {out / 'report.txt'}")
    return 0


def _experiment_config_for(app, alloc, base_cfg: ExperimentConfig) -> ExperimentConfig:
    """Wrap a generated sim app in a minimal config reusing the CLI's knobs."""
    by_service: dict[str, list[Allocation]] = {}
    for target in sorted(alloc):
        by_service.setdefault(target.service, []).append(
            Allocation(target.service, target.resource, alloc[target], alloc[target])
        )
    services = tuple(
        ServiceSpec(name=name, allocations=tuple(allocs))
        for name, allocs in sorted(by_service.items())
    )
    return ExperimentConfig(
        application=ApplicationSpec(services, app),
        stress_levels=base_cfg.stress_levels,
        repetitions=1,
        metric=base_cfg.metric,
        imr_threshold=base_cfg.imr_threshold,
        paradox_epsilon=base_cfg.paradox_epsilon,
        seed=base_cfg.seed,
        backend=base_cfg.backend,
    )


def _validate_one(cfg: ExperimentConfig):
    """Run the throttle pipeline and the provisioning oracle on one sim app.

    Returns (match, tau, throttle_top, oracle_top, disagreements).
    """
    from scipy import stats

    app = cfg.application.simulation
    allocations = cfg.application.allocation_map()
    alloc_values = {t: a.value for t, a in allocations.items()}

    schedule = generate_schedule(cfg)
    backend = SimBackend(app, allocations)
    source = SimulatedSource(backend, cfg.metric, 0.0, cfg.seed)
    records = run_experiment(cfg, schedule, backend, source, results_path=None)
    report = build_report(records, cfg.metric, cfg.imr_threshold, cfg.paradox_epsilon)

    oracle = brute_force_ranking(
        app, alloc_values, cfg.metric, factor=VALIDATE_PROVISION_FACTOR
    )
    throttle_top = report.candidates[0].target
    oracle_top = oracle[0][0]

    throttle_rank = {c.target: c.rank for c in report.candidates}
    oracle_rank = {t: i + 1 for i, (t, _) in enumerate(oracle)}
    shared = sorted(set(throttle_rank) & set(oracle_rank))
    disagreements = [
        (t, throttle_rank[t], oracle_rank[t])
        for t in shared
        if throttle_rank[t] != oracle_rank[t]
    ]

    tau = math.nan
    if len(shared) > 1:
        throttle_d = {c.target: c.rank_d for c in report.candidates}
        oracle_impr = dict(oracle)
        result = stats.kendalltau(
            [throttle_d[t] for t in shared], [oracle_impr[t] for t in shared]
        )
        tau = result.correlation
    return throttle_top == oracle_top, tau, throttle_top, oracle_top, disagreements


def cmd_validate(args) -> int:
    cfg = _load(args)
    if cfg.backend.kind != "sim":
        raise ConfigError(["validate requires simulation (backend 'sim')"])

    if args.random:
        shape = args.shape or SERIES
        meta_rng = random.Random(cfg.seed)
        matches = 0
        taus = []
        mismatches = []
        for i in range(args.random):
            app_seed = meta_rng.randrange(2**32)
            n_services = meta_rng.randint(2, 5)
            app, alloc = generate_random_app(app_seed, n_services, shape)
            app_cfg = _experiment_config_for(app, alloc, cfg)
            match, tau, throttle_top, oracle_top, _ = _validate_one(app_cfg)
            if match:
                matches += 1
            else:
                mismatches.append((i, app_seed, throttle_top, oracle_top))
            if not math.isnan(tau):
                taus.append(tau)
        print(f"shape {shape}: top-1 agreement: {matches}/{args.random} "
              f"({100.0 * matches / args.random:.1f}%)")
        if taus:
            print(f"mean rank correlation (kendall tau): {sum(taus) / len(taus):.4f}")
        for i, app_seed, throttle_top, oracle_top in mismatches[:20]:
            print(f"  app {i} (seed {app_seed}): throttle top {throttle_top} "
                  f"vs oracle top {oracle_top}")
        if len(mismatches) > 20:
            print(f"  ... and {len(mismatches) - 20} more")
        return 0

    if cfg.application.simulation is None:
        raise ConfigError(
            ["validate requires application.simulation (or use --random N)"]
        )
    run_cfg = cfg if cfg.repetitions == 1 else apply_overrides(cfg, repetitions=1)
    match, tau, throttle_top, oracle_top, disagreements = _validate_one(run_cfg)
    if match:
        print(f"top-1 agreement: MATCH {throttle_top}")
    else:
        print(f"top-1 agreement: MISMATCH throttle={throttle_top} oracle={oracle_top}")
    if not math.isnan(tau):
        print(f"rank correlation (kendall tau): {tau:.4f}")
    if disagreements:
        print("per-target rank disagreements (throttle vs oracle):")
        for target, tr, orr in disagreements:
            print(f"  {target}: throttle rank {tr}, oracle rank {orr}")
    else:
        print("per-target rank disagreements: none")
    return 0


def _emit_scripts(cfg: ExperimentConfig, out: Path) -> int:
    backend = _command_backend(cfg, dry_run=True)
    schedule = generate_schedule(cfg)

    gaps = []
    for target in cfg.active_targets():
        for action in (
            BackendAction(ActionKind.APPLY, target, cfg.stress_levels[0]),
            BackendAction(ActionKind.CLEAR, target),
        ):
            try:
                backend.plan_for(action)
            except BackendError as exc:
                gaps.append(str(exc))
    if gaps:
        raise ConfigError(sorted(set(gaps)))

    plans_dir = out / "plans"
    plans_dir.mkdir(parents=True, exist_ok=True)
    for idx, trial in enumerate(schedule.trials, start=1):
        script = trial_script(
            backend,
            trial.target,
            trial.level,
            idx,
            trial.repetition,
            cfg.backend.metric_command,
        )
        (plans_dir / f"trial-{idx:04d}.sh").write_text(script, encoding="utf-8")
    print(f"wrote {len(schedule.trials)} scripts to {plans_dir}")
    return 0


def cmd_emit_scripts(args) -> int:
    cfg = _load(args)
    if cfg.backend.kind != "command":
        raise ConfigError(
            ["emit-scripts requires the command backend (set backend or --backend command)"]
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return _emit_scripts(cfg, out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="throttlescout",
        description=(
            "Find microservice bottlenecks by throttling one (service, resource) "
            "pair at a time and ranking the resulting degradation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--levels", help="override stress levels, CSV of percents")
        p.add_argument("--reps", type=int, help="override repetitions")
        p.add_argument("--theta", type=float, help="override IMR threshold")
        p.add_argument("--epsilon", type=float, help="override paradox epsilon")
        p.add_argument("--seed", type=int, help="override seed")
        p.add_argument("--backend", choices=["sim", "command"], help="override backend")

    p_plan = sub.add_parser("plan", help="generate and persist the throttle schedule")
    common(p_plan)
    p_plan.set_defaults(func=cmd_plan)

    p_run = sub.add_parser("run", help="execute the schedule (resumes results.jsonl)")
    common(p_run)
    p_run.add_argument(
        "--dry-run",
        action="store_true",
        help="write per-trial command scripts instead of executing (command backend)",
    )
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="analyze results.jsonl into a report")
    common(p_report)
    p_report.set_defaults(func=cmd_report)

    p_validate = sub.add_parser(
        "validate",
        help="compare throttle ranking against the brute-force provisioning oracle",
    )
    common(p_validate)
    p_validate.add_argument("--random", type=int, metavar="N",
                            help="validate on N generated apps instead of the config's")
    p_validate.add_argument("--shape", choices=[SERIES, DAG],
                            help="generated app shape (default SERIES)")
    p_validate.set_defaults(func=cmd_validate)

    p_emit = sub.add_parser(
        "emit-scripts", help="write one shell script per trial (command backend)"
    )
    common(p_emit)
    p_emit.add_argument("--dry-run", action="store_true",
                        help="accepted for symmetry; emit-scripts never executes")
    p_emit.set_defaults(func=cmd_emit_scripts)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return 2
    except MissingBaselineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BackendError, MetricError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
