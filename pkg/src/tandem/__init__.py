"""Hybrid device/cloud reasoning: decompose a query into sub-tasks, schedule
them on a dependency DAG, route each sub-task to a small on-device model or a
large cloud model, and measure the accuracy/latency/cost trade-off."""

from .core import (
    AllocationScheme,
    Checker,
    CostLedger,
    Metrics,
    ModelTier,
    SubTask,
    Task,
    merge_ledgers,
    scheme_distance,
)
from .uncertainty import alpha_quantile, rank_by_difficulty

__version__ = "0.1.0"

__all__ = [
    "AllocationScheme",
    "Checker",
    "CostLedger",
    "Metrics",
    "ModelTier",
    "SubTask",
    "Task",
    "alpha_quantile",
    "merge_ledgers",
    "rank_by_difficulty",
    "scheme_distance",
    "__version__",
]
