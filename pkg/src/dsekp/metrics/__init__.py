"""Log schemas and the statistical analysis pipeline."""

from .logs import (
    CLIENT_COLUMNS,
    SERVER_COLUMNS,
    ClientLogRecord,
    SchemaMismatch,
    ServerLogRecord,
    annotate_throughput,
    read_csv,
    write_csv,
)
from .stats import (
    DivisionDomain,
    TooFewSamples,
    filter_outliers,
    latency_stats,
    payload_overhead_pct,
    reliability,
    significance,
    throughput_bins,
)
from .summary import Comparison, RunSummary, compare, load_run, summarize

__all__ = [
    "CLIENT_COLUMNS",
    "SERVER_COLUMNS",
    "ClientLogRecord",
    "Comparison",
    "DivisionDomain",
    "RunSummary",
    "SchemaMismatch",
    "ServerLogRecord",
    "TooFewSamples",
    "annotate_throughput",
    "compare",
    "filter_outliers",
    "latency_stats",
    "load_run",
    "payload_overhead_pct",
    "read_csv",
    "reliability",
    "significance",
    "summarize",
    "throughput_bins",
    "write_csv",
]
