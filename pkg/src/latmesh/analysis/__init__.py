from .dataset import (
    Dataset,
    RoundRecord,
    WindowSeries,
    filter_pairs,
    group_by_class,
    load_observations,
    merge_runs,
    rounds,
    window_series,
)
from .quorum import QuorumSeries, parse_quorum, quorum_latency, quorum_series
from .report import Report, report
from .stats import (
    CdfPoints,
    Histogram,
    StatsSummary,
    TResult,
    cdf,
    histogram,
    percentile,
    summarize,
    two_sample_t,
)

__all__ = [
    "CdfPoints", "Dataset", "Histogram", "QuorumSeries", "Report", "RoundRecord",
    "StatsSummary", "TResult", "WindowSeries", "cdf", "filter_pairs", "group_by_class",
    "histogram", "load_observations", "merge_runs", "parse_quorum", "percentile",
    "quorum_latency", "quorum_series", "report", "rounds", "summarize", "two_sample_t",
    "window_series",
]
