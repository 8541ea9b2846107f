"""throttlescout: find microservice bottlenecks by throttling resources.

Throttle each (service, resource) pair in turn, measure how much the
application metric degrades, and rank the candidates.  Ships a deterministic
application simulator and a brute-force provisioning oracle so the whole
pipeline is testable without a cluster, plus a cgroup/tc command backend for
real hosts.
"""

from .analysis import (
    ImrReport,
    build_report,
    classify_imrs,
    compute_degradation,
    detect_paradoxes,
    rank_candidates,
    render_report,
    select_mimr,
)
from .backends import (
    CommandBackend,
    CommandPlan,
    SimBackend,
    emit_cpu_quota_commands,
    emit_cpuset_commands,
    emit_io_limit_commands,
    emit_net_limit_commands,
)
from .core import (
    Allocation,
    ApplicationSpec,
    ConfigError,
    Direction,
    MetricSpec,
    ResourceKind,
    ServiceSpec,
    StressLevel,
    Target,
    effective_allocation,
    validate_application_spec,
)
from .planner import (
    ExperimentConfig,
    Schedule,
    Trial,
    generate_schedule,
    load_config,
    validate_schedule,
)
from .runner import (
    CommandSource,
    MeasurementRecord,
    SimulatedSource,
    aggregate_repetitions,
    read_results,
    run_experiment,
    run_trial,
)
from .simulator import (
    CallPhase,
    SimApp,
    SimService,
    WorkPhase,
    brute_force_ranking,
    generate_random_app,
    provisioning_improvement,
    service_completion_time,
    simulate_metric,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "ApplicationSpec",
    "CallPhase",
    "CommandBackend",
    "CommandPlan",
    "CommandSource",
    "ConfigError",
    "Direction",
    "ExperimentConfig",
    "ImrReport",
    "MeasurementRecord",
    "MetricSpec",
    "ResourceKind",
    "Schedule",
    "ServiceSpec",
    "SimApp",
    "SimBackend",
    "SimService",
    "SimulatedSource",
    "StressLevel",
    "Target",
    "Trial",
    "WorkPhase",
    "aggregate_repetitions",
    "brute_force_ranking",
    "build_report",
    "classify_imrs",
    "compute_degradation",
    "detect_paradoxes",
    "effective_allocation",
    "emit_cpu_quota_commands",
    "emit_cpuset_commands",
    "emit_io_limit_commands",
    "emit_net_limit_commands",
    "generate_random_app",
    "generate_schedule",
    "load_config",
    "provisioning_improvement",
    "rank_candidates",
    "read_results",
    "render_report",
    "run_experiment",
    "run_trial",
    "select_mimr",
    "service_completion_time",
    "simulate_metric",
    "validate_application_spec",
    "validate_schedule",
]
