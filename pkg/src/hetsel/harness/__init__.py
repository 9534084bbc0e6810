"""Scenario runner, mobility executor, traces, statistics, benchmark."""

from .mobility import MobilityConfig, MobilityDelayModel, MobilityExecutor
from .trace import TraceError, TraceRecord, TraceRecorder, read_trace
from .stats import BreakdownReport, RunStats, compute_stats, report_breakdown
from .bench import BenchSummary, bench_trg
from .runner import Run, RunResult, build_run, execute_run, execute_scenario, run_to_files

__all__ = [
    "BenchSummary",
    "BreakdownReport",
    "MobilityConfig",
    "MobilityDelayModel",
    "MobilityExecutor",
    "Run",
    "RunResult",
    "RunStats",
    "TraceError",
    "TraceRecord",
    "TraceRecorder",
    "bench_trg",
    "build_run",
    "compute_stats",
    "execute_run",
    "execute_scenario",
    "read_trace",
    "report_breakdown",
    "run_to_files",
]
