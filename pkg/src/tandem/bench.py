"""Benchmark harness: load task files, run strategies end-to-end, report metrics.

Every task flows through decompose -> schedule -> allocate -> execute -> judge.
Per-task failures count as incorrect and the suite continues. Metrics fold over
traces in task-id order, so a fixed mock population and seed reproduce reports
byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .adapter import AdapterWeights, allocate
from .backend import BackendPool, ChatRequest
from .core import (
    AllocationScheme,
    Checker,
    CostLedger,
    Metrics,
    ModelTier,
    SubTask,
    Task,
    merge_ledgers,
    uniform_scheme,
)
from .decompose import DecomposeExemplar, decompose, exemplars_for
from .errors import BenchmarkFormatError, ConfigError, TandemError
from .execute import TaskTrace, run_on_graph
from .schedule import (
    DependencyGraph,
    build_dependency_prompt,
    build_graph,
    chain_graph,
    parse_dependencies,
    DEPENDENCY_SYSTEM_PROMPT,
)
from .search import initial_allocation, parse_difficulty_verdict
from .uncertainty import DEFAULT_ALPHA, alpha_quantile, rank_by_difficulty

logger = logging.getLogger(__name__)

REFERRAL_SYSTEM_PROMPT = (
    "You judge how difficult whole tasks are. Answer with exactly one word: simple if a "
    "small on-device language model can solve the task, complex if it needs a large cloud model."
)

CSV_COLUMNS = (
    "strategy",
    "accuracy",
    "mean_wall_seconds",
    "mean_api_cents",
    "slm_time_fraction",
    "slm_subtask_fraction",
)


class StrategyKind(Enum):
    ADAPTER = "adapter"
    THRESHOLD = "threshold"
    ALL_DEVICE = "all-device"
    ALL_CLOUD = "all-cloud"
    SIMPLE_REFERRAL = "simple-referral"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class Strategy:
    """How sub-tasks get allocated for a suite run.

    THRESHOLD and SEQUENTIAL probe each task on-device first and split on the
    quantile score (theta defaults to the per-task median); SEQUENTIAL
    additionally forces a chain graph instead of judged dependencies.
    """

    kind: StrategyKind
    theta: float | None = None
    alpha: float = DEFAULT_ALPHA

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class TradeoffPoint:
    cloud_fraction: float
    metrics: Metrics


def load_benchmark(path: str | Path) -> list[Task]:
    """Parse a benchmark JSONL file, one task per line."""
    tasks: list[Task] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BenchmarkFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                checker_name = raw.get("checker")
                if checker_name is None:
                    logger.warning("%s:%d: missing checker, defaulting to exact", path, lineno)
                    checker = Checker.EXACT
                else:
                    checker = Checker(checker_name)
                task = Task(
                    id=str(raw["id"]),
                    query=raw["query"],
                    category=raw.get("category", ""),
                    ground_truth=str(raw.get("ground_truth", "")),
                    checker=checker,
                )
            except (KeyError, ValueError) as exc:
                raise BenchmarkFormatError(f"{path}:{lineno}: {exc}") from exc
            if task.id in seen:
                raise BenchmarkFormatError(f"{path}:{lineno}: duplicate task id {task.id!r}")
            seen.add(task.id)
            tasks.append(task)
    return tasks


@dataclass(frozen=True)
class TaskRun:
    """One task's trace plus pipeline overhead not captured inside the trace."""

    task: Task
    trace: TaskTrace
    overhead: CostLedger
    subtask_count: int
    device_assigned: int


@dataclass
class SuiteOptions:
    decompose_tier: ModelTier = ModelTier.DEVICE
    dependency_tier: ModelTier = ModelTier.DEVICE
    max_tokens: int = 512
    workers: int = 4
    step_workers: int = 8


def _judged_graph(
    task: Task,
    subtasks: Sequence[SubTask],
    pool: BackendPool,
    options: SuiteOptions,
) -> tuple[DependencyGraph, CostLedger]:
    request = ChatRequest(
        system=DEPENDENCY_SYSTEM_PROMPT,
        user=build_dependency_prompt(task, subtasks),
        max_tokens=options.max_tokens,
    )
    response, ledger = pool.complete_priced(options.dependency_tier, request)
    deps = parse_dependencies(response.text, subtasks)
    return build_graph(subtasks, deps), ledger


def _probe_scores(
    task: Task,
    subtasks: Sequence[SubTask],
    graph: DependencyGraph,
    pool: BackendPool,
    options: SuiteOptions,
    alpha: float,
) -> tuple[TaskTrace, dict[int, float]]:
    probe = run_on_graph(
        task,
        subtasks,
        graph,
        uniform_scheme((st.index for st in subtasks), ModelTier.DEVICE),
        pool,
        max_tokens=options.max_tokens,
        max_workers=options.step_workers,
    )
    if probe.error is not None:
        raise TandemError(f"device probe failed: {probe.error}")
    scores = {s.index: alpha_quantile(s.token_probs, alpha) for s in probe.steps}
    return probe, scores


def _referral_scheme(
    task: Task,
    subtasks: Sequence[SubTask],
    pool: BackendPool,
    options: SuiteOptions,
) -> tuple[AllocationScheme, CostLedger]:
    request = ChatRequest(
        system=REFERRAL_SYSTEM_PROMPT,
        user=(
            "Please evaluate the complexity of the following task and answer with exactly "
            f"one word, simple or complex.\nTask: {task.query}"
        ),
        max_tokens=16,
    )
    response, ledger = pool.complete_priced(ModelTier.CLOUD, request)
    tier = parse_difficulty_verdict(response.text)
    if tier is None:
        logger.warning("task %s: unusable referral verdict %r, routing to cloud", task.id, response.text)
        tier = ModelTier.CLOUD
    return uniform_scheme((st.index for st in subtasks), tier), ledger


def _failed_trace(task: Task, reason: str) -> TaskTrace:
    return TaskTrace(
        task_id=task.id,
        scheme=AllocationScheme({}),
        steps=(),
        final_answer="",
        correct=False,
        total=CostLedger(),
        wall_seconds=0.0,
        error=reason,
    )


def _run_task(
    task: Task,
    strategy: Strategy,
    pool: BackendPool,
    exemplars: Mapping[str, list[DecomposeExemplar]],
    options: SuiteOptions,
    adapter_weights: AdapterWeights | None,
) -> TaskRun:
    try:
        subtasks, decompose_ledger = decompose(
            task,
            exemplars_for(dict(exemplars), task.category),
            options.decompose_tier,
            pool,
            max_tokens=options.max_tokens,
        )
        overhead = [decompose_ledger]

        if strategy.kind is StrategyKind.SEQUENTIAL:
            graph = chain_graph(subtasks)
        else:
            graph, dependency_ledger = _judged_graph(task, subtasks, pool, options)
            overhead.append(dependency_ledger)

        indices = [st.index for st in subtasks]
        cache = None
        if strategy.kind is StrategyKind.ALL_DEVICE:
            scheme = uniform_scheme(indices, ModelTier.DEVICE)
        elif strategy.kind is StrategyKind.ALL_CLOUD:
            scheme = uniform_scheme(indices, ModelTier.CLOUD)
        elif strategy.kind in (StrategyKind.THRESHOLD, StrategyKind.SEQUENTIAL):
            probe, scores = _probe_scores(task, subtasks, graph, pool, options, strategy.alpha)
            theta = strategy.theta
            if theta is None:
                theta = statistics.median(scores.values())
            scheme = initial_allocation(scores, theta)
            cache = {s.index: s for s in probe.steps}
            overhead.append(probe.total)
        elif strategy.kind is StrategyKind.SIMPLE_REFERRAL:
            scheme, referral_ledger = _referral_scheme(task, subtasks, pool, options)
            overhead.append(referral_ledger)
        elif strategy.kind is StrategyKind.ADAPTER:
            if adapter_weights is None:
                raise ConfigError("the adapter strategy requires trained weights")
            scheme = AllocationScheme(
                {st.index: allocate(adapter_weights, st.description, pool) for st in subtasks}
            )
        else:
            raise ConfigError(f"unknown strategy kind {strategy.kind}")

        trace = run_on_graph(
            task,
            subtasks,
            graph,
            scheme,
            pool,
            max_tokens=options.max_tokens,
            max_workers=options.step_workers,
            cached_steps=cache,
        )
        return TaskRun(
            task=task,
            trace=trace,
            overhead=merge_ledgers(overhead),
            subtask_count=len(subtasks),
            device_assigned=scheme.count(ModelTier.DEVICE),
        )
    except TandemError as exc:
        logger.warning("task %s failed: %s", task.id, exc)
        return TaskRun(
            task=task,
            trace=_failed_trace(task, str(exc)),
            overhead=CostLedger(),
            subtask_count=0,
            device_assigned=0,
        )


def _metrics_from_runs(runs: Sequence[TaskRun]) -> Metrics:
    if not runs:
        raise ValueError("cannot compute metrics over zero tasks")
    ordered = sorted(runs, key=lambda r: r.task.id)
    correct = sum(1 for r in ordered if r.trace.correct)
    wall = [r.trace.wall_seconds + r.overhead.wall_seconds for r in ordered]
    cents = [r.trace.total.api_cents + r.overhead.api_cents for r in ordered]

    device_seconds = 0.0
    step_seconds = 0.0
    for r in ordered:
        for step in r.trace.steps:
            step_seconds += step.ledger.wall_seconds
            if step.tier_used is ModelTier.DEVICE:
                device_seconds += step.ledger.wall_seconds
        step_seconds += r.trace.final_ledger.wall_seconds
        if r.trace.final_tier is ModelTier.DEVICE:
            device_seconds += r.trace.final_ledger.wall_seconds

    total_subtasks = sum(r.subtask_count for r in ordered)
    device_subtasks = sum(r.device_assigned for r in ordered)
    return Metrics(
        accuracy=correct / len(ordered),
        mean_wall_seconds=math.fsum(wall) / len(ordered),
        mean_api_cents=math.fsum(cents) / len(ordered),
        slm_time_fraction=device_seconds / step_seconds if step_seconds else 0.0,
        slm_subtask_fraction=device_subtasks / total_subtasks if total_subtasks else 0.0,
    )


def run_suite(
    tasks: Sequence[Task],
    strategy: Strategy,
    pool: BackendPool,
    exemplars: Mapping[str, list[DecomposeExemplar]],
    *,
    adapter_weights: AdapterWeights | None = None,
    options: SuiteOptions | None = None,
) -> tuple[Metrics, list[TaskTrace]]:
    """Run every task under one strategy and aggregate metrics."""
    options = options or SuiteOptions()
    if strategy.kind is StrategyKind.ADAPTER and adapter_weights is None:
        raise ConfigError("the adapter strategy requires trained weights")
    runs = _run_all(tasks, strategy, pool, exemplars, options, adapter_weights)
    metrics = _metrics_from_runs(runs)
    return metrics, [r.trace for r in sorted(runs, key=lambda r: r.task.id)]


def _run_all(
    tasks: Sequence[Task],
    strategy: Strategy,
    pool: BackendPool,
    exemplars: Mapping[str, list[DecomposeExemplar]],
    options: SuiteOptions,
    adapter_weights: AdapterWeights | None,
) -> list[TaskRun]:
    if options.workers <= 1 or len(tasks) <= 1:
        return [
            _run_task(t, strategy, pool, exemplars, options, adapter_weights) for t in tasks
        ]
    with ThreadPoolExecutor(max_workers=options.workers) as executor:
        futures = [
            executor.submit(_run_task, t, strategy, pool, exemplars, options, adapter_weights)
            for t in tasks
        ]
        return [f.result() for f in futures]


def tradeoff_sweep(
    tasks: Sequence[Task],
    fractions: Sequence[float],
    pool: BackendPool,
    exemplars: Mapping[str, list[DecomposeExemplar]],
    *,
    alpha: float = DEFAULT_ALPHA,
    options: SuiteOptions | None = None,
) -> list[TradeoffPoint]:
    """Cost-accuracy curve: for each fraction f, send the ceil(f*k) hardest
    sub-tasks of every task to the cloud and the rest to the device.

    The scoring probe is shared across fractions and excluded from reported
    metrics, so the f=0 and f=1 points coincide exactly with plain all-device
    and all-cloud runs.
    """
    options = options or SuiteOptions()
    if list(fractions) != sorted(fractions):
        raise ValueError("fractions must be sorted ascending")
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")

    prepared: list[tuple[Task, list[SubTask], DependencyGraph, CostLedger, dict, list[int]]] = []
    for task in tasks:
        subtasks, decompose_ledger = decompose(
            task,
            exemplars_for(dict(exemplars), task.category),
            options.decompose_tier,
            pool,
            max_tokens=options.max_tokens,
        )
        graph, dependency_ledger = _judged_graph(task, subtasks, pool, options)
        probe, scores = _probe_scores(task, subtasks, graph, pool, options, alpha)
        hardest_first = rank_by_difficulty(scores)
        prepared.append(
            (
                task,
                subtasks,
                graph,
                decompose_ledger + dependency_ledger,
                {s.index: s for s in probe.steps},
                hardest_first,
            )
        )

    points: list[TradeoffPoint] = []
    for fraction in fractions:
        runs: list[TaskRun] = []
        for task, subtasks, graph, overhead, cache, hardest_first in prepared:
            k = len(subtasks)
            n_cloud = math.ceil(fraction * k)
            cloud_set = set(hardest_first[:n_cloud])
            scheme = AllocationScheme(
                {
                    st.index: ModelTier.CLOUD if st.index in cloud_set else ModelTier.DEVICE
                    for st in subtasks
                }
            )
            trace = run_on_graph(
                task,
                subtasks,
                graph,
                scheme,
                pool,
                max_tokens=options.max_tokens,
                max_workers=options.step_workers,
                cached_steps=cache,
            )
            runs.append(
                TaskRun(
                    task=task,
                    trace=trace,
                    overhead=overhead,
                    subtask_count=k,
                    device_assigned=scheme.count(ModelTier.DEVICE),
                )
            )
        points.append(TradeoffPoint(cloud_fraction=fraction, metrics=_metrics_from_runs(runs)))
    return points


def _metrics_payload(metrics: Metrics) -> dict:
    return {
        "accuracy": metrics.accuracy,
        "mean_wall_seconds": metrics.mean_wall_seconds,
        "mean_api_cents": round(metrics.mean_api_cents, 2),
        "slm_time_fraction": metrics.slm_time_fraction,
        "slm_subtask_fraction": metrics.slm_subtask_fraction,
    }


def _csv_row(label: str, metrics: Metrics) -> str:
    return ",".join(
        (
            label,
            f"{metrics.accuracy:.4f}",
            f"{metrics.mean_wall_seconds:.1f}",
            f"{metrics.mean_api_cents:.2f}",
            f"{metrics.slm_time_fraction:.4f}",
            f"{metrics.slm_subtask_fraction:.4f}",
        )
    )


def emit_report(
    metrics: Metrics,
    strategy_label: str,
    out_dir: str | Path,
    *,
    task_count: int,
) -> tuple[Path, Path]:
    """Write report.json (canonical, sorted keys) and report.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    payload = {
        "strategy": strategy_label,
        "tasks": task_count,
        "metrics": _metrics_payload(metrics),
    }
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    csv_path = out / "report.csv"
    csv_path.write_text(
        ",".join(CSV_COLUMNS) + "\n" + _csv_row(strategy_label, metrics) + "\n", encoding="utf-8"
    )
    return json_path, csv_path


def emit_tradeoff(points: Sequence[TradeoffPoint], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "tradeoff.csv"
    header = "cloud_fraction," + ",".join(CSV_COLUMNS[1:])
    rows = [
        f"{p.cloud_fraction:.4f}," + _csv_row("", p.metrics).split(",", 1)[1] for p in points
    ]
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path


def trace_payload(trace: TaskTrace) -> dict:
    return {
        "task_id": trace.task_id,
        "scheme": {str(i): trace.scheme.tier_of(i).value for i in sorted(trace.scheme.indices())},
        "steps": [
            {
                "index": s.index,
                "tier": s.tier_used.value,
                "answer": s.answer,
                "token_probs": list(s.token_probs),
                "wall_seconds": s.ledger.wall_seconds,
                "api_cents": s.ledger.api_cents,
            }
            for s in trace.steps
        ],
        "final_answer": trace.final_answer,
        "final_tier": trace.final_tier.value if trace.final_tier else None,
        "correct": trace.correct,
        "wall_seconds": trace.wall_seconds,
        "total": {
            "wall_seconds": trace.total.wall_seconds,
            "api_cents": trace.total.api_cents,
            "device_calls": trace.total.device_calls,
            "cloud_calls": trace.total.cloud_calls,
            "prompt_tokens": trace.total.prompt_tokens,
            "completion_tokens": trace.total.completion_tokens,
        },
        "error": trace.error,
    }


def write_traces(traces: Sequence[TaskTrace], out_dir: str | Path) -> Path:
    """One JSON document per task under <out_dir>/traces/."""
    traces_dir = Path(out_dir) / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        path = traces_dir / f"{trace.task_id}.json"
        path.write_text(
            json.dumps(trace_payload(trace), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return traces_dir
