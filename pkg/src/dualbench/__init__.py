"""Plan, ingest, analyze and verify native-vs-container HPC benchmark campaigns."""

from .analytics import (
    ScalingSeries,
    Stats,
    aggregate,
    absolute_overhead,
    bandwidth_reduction,
    classify_overhead_pattern,
    detect_outliers,
    parity_deviation,
    peak_bus_bandwidth,
    regime_summary,
    relative_overhead,
    speedup,
    strong_efficiency,
    weak_normalized,
)
from .harness import expand_matrix, ingest, load_plan, render_job_script
from .model import RunRecord, SystemDescriptor, validate_run
from .verdict import ExpectationProfile, Finding, Severity, Status, compose_verdict

__version__ = "0.1.0"

__all__ = [
    "ExpectationProfile",
    "Finding",
    "RunRecord",
    "ScalingSeries",
    "Severity",
    "Stats",
    "Status",
    "SystemDescriptor",
    "absolute_overhead",
    "aggregate",
    "bandwidth_reduction",
    "classify_overhead_pattern",
    "compose_verdict",
    "detect_outliers",
    "expand_matrix",
    "ingest",
    "load_plan",
    "parity_deviation",
    "peak_bus_bandwidth",
    "regime_summary",
    "relative_overhead",
    "render_job_script",
    "speedup",
    "strong_efficiency",
    "validate_run",
    "weak_normalized",
]
