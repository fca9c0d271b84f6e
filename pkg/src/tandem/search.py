"""Allocation search: quantile-guided reassignment plus the two baseline searchers.

The guided search probes every sub-task on the device tier once, scores each
answer's token probabilities at a quantile level, thresholds the scores into
an initial device/cloud split, then walks a single greedy path: while the task
stays correct it pulls the most-confident cloud sub-tasks back to the device,
and while it stays wrong it pushes the least-confident device sub-tasks to the
cloud. The walk stops when a side empties or correctness flips. Final schemes
that solve the task are emitted as 0/1 difficulty labels for adapter training.
"""

from __future__ import annotations

import json
import logging
import random
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .backend import BackendPool, ChatRequest, EmbeddingVector
from .core import (
    AllocationScheme,
    CostLedger,
    ModelTier,
    SubTask,
    Task,
    merge_ledgers,
    uniform_scheme,
)
from .errors import EmptyDatasetError
from .execute import StepResult, TaskTrace, run_on_graph
from .schedule import DependencyGraph
from .uncertainty import DEFAULT_ALPHA, alpha_quantile

logger = logging.getLogger(__name__)

DEFAULT_BINARY_ATTEMPTS = 5

ZERO_SHOT_SYSTEM_PROMPT = (
    "You judge how difficult reasoning sub-tasks are. Answer with exactly one word: "
    "simple if a small on-device language model can solve the sub-task, complex if it "
    "needs a large cloud model."
)


@dataclass(frozen=True)
class SearchOutcome:
    """Result of one allocation search over a single task."""

    task_id: str
    final_scheme: AllocationScheme
    final_correct: bool
    evaluations: int
    path: tuple[tuple[AllocationScheme, bool], ...]
    spent: CostLedger = CostLedger()

    def __post_init__(self):
        if self.evaluations != len(self.path):
            raise ValueError("evaluations must equal the number of recorded passes")
        if self.evaluations < 1:
            raise ValueError("a search outcome records at least one evaluation")


@dataclass(frozen=True)
class AdapterRecord:
    """One labeled sub-task: 0 when the searched scheme kept it on-device, 1 for cloud."""

    task_id: str
    subtask_index: int
    subtask_text: str
    label: int
    embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def initial_allocation(scores: Mapping[int, float], theta: float) -> AllocationScheme:
    """Threshold split: score strictly above theta stays on-device, the rest go cloud."""
    return AllocationScheme(
        {i: ModelTier.DEVICE if score > theta else ModelTier.CLOUD for i, score in scores.items()}
    )


def quantile_guided_search(
    task: Task,
    subtasks: Sequence[SubTask],
    graph: DependencyGraph,
    pool: BackendPool,
    *,
    n: int = 1,
    theta: float | None = None,
    alpha: float = DEFAULT_ALPHA,
    max_tokens: int = 512,
    max_workers: int = 8,
) -> SearchOutcome:
    """Greedy quantile-guided reassignment search for one task.

    The device-tier probe answers are cached and reused for every subsequent
    evaluation, so each pass only pays for cloud-assigned sub-tasks and the
    final aggregation query. When theta is not given, the median of the
    task's own scores is used, which balances the initial split.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    indices = [st.index for st in subtasks]
    all_device = uniform_scheme(indices, ModelTier.DEVICE)
    probe = run_on_graph(
        task, subtasks, graph, all_device, pool, max_tokens=max_tokens, max_workers=max_workers
    )
    if probe.error is not None:
        # Probe already constitutes a (failed) evaluation of the all-device scheme.
        return SearchOutcome(
            task_id=task.id,
            final_scheme=all_device,
            final_correct=False,
            evaluations=1,
            path=((all_device, False),),
            spent=probe.total,
        )
    cache = {s.index: s for s in probe.steps}
    scores = {s.index: alpha_quantile(s.token_probs, alpha) for s in probe.steps}
    if theta is None:
        theta = statistics.median(scores.values())
    spent = [probe.total]

    def evaluate(candidate: AllocationScheme) -> TaskTrace:
        trace = run_on_graph(
            task,
            subtasks,
            graph,
            candidate,
            pool,
            max_tokens=max_tokens,
            max_workers=max_workers,
            cached_steps=cache,
        )
        spent.append(trace.total)
        return trace

    scheme = initial_allocation(scores, theta)
    if scheme == all_device:
        trace = probe
    else:
        trace = evaluate(scheme)
    result = trace.correct
    path: list[tuple[AllocationScheme, bool]] = [(scheme, result)]
    final_scheme, final_correct = scheme, result

    while trace.error is None:
        if result:
            movable = sorted(scheme.indices_of(ModelTier.CLOUD), key=lambda i: (-scores[i], i))
            target = ModelTier.DEVICE
        else:
            movable = sorted(scheme.indices_of(ModelTier.DEVICE), key=lambda i: (scores[i], i))
            target = ModelTier.CLOUD
        if not movable:
            break
        candidate = scheme.reassigned({i: target for i in movable[:n]})
        trace = evaluate(candidate)
        if trace.error is not None:
            logger.warning("task %s: evaluation failed mid-search, keeping last scheme", task.id)
            break
        path.append((candidate, trace.correct))
        if trace.correct != result:
            # Prefer whichever side of the flip was correct.
            if trace.correct:
                final_scheme, final_correct = candidate, True
            else:
                final_scheme, final_correct = scheme, result
            break
        scheme, result = candidate, trace.correct
        final_scheme, final_correct = scheme, result

    return SearchOutcome(
        task_id=task.id,
        final_scheme=final_scheme,
        final_correct=final_correct,
        evaluations=len(path),
        path=tuple(path),
        spent=merge_ledgers(spent),
    )


def binary_search_baseline(
    task: Task,
    subtasks: Sequence[SubTask],
    graph: DependencyGraph,
    pool: BackendPool,
    *,
    attempts: int = DEFAULT_BINARY_ATTEMPTS,
    rng: random.Random | None = None,
    max_tokens: int = 512,
    max_workers: int = 8,
) -> SearchOutcome:
    """Random halving baseline: start all-cloud, repeatedly move half of the
    cloud set to the device at random, retrying each failed halving up to
    ``attempts`` times. Every attempt is a full reasoning pass."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    rng = rng or random.Random(0)
    indices = [st.index for st in subtasks]
    spent: list[CostLedger] = []

    def evaluate(candidate: AllocationScheme) -> TaskTrace:
        trace = run_on_graph(
            task, subtasks, graph, candidate, pool, max_tokens=max_tokens, max_workers=max_workers
        )
        spent.append(trace.total)
        return trace

    scheme = uniform_scheme(indices, ModelTier.CLOUD)
    trace = evaluate(scheme)
    result = trace.correct
    path: list[tuple[AllocationScheme, bool]] = [(scheme, result)]

    if result:
        while True:
            cloud = scheme.indices_of(ModelTier.CLOUD)
            if not cloud:
                break
            half = (len(cloud) + 1) // 2
            promoted = False
            for _ in range(attempts):
                picked = rng.sample(cloud, half)
                candidate = scheme.reassigned({i: ModelTier.DEVICE for i in picked})
                attempt_trace = evaluate(candidate)
                path.append((candidate, attempt_trace.correct))
                if attempt_trace.error is not None:
                    break
                if attempt_trace.correct:
                    scheme = candidate
                    promoted = True
                    break
            if not promoted:
                break

    return SearchOutcome(
        task_id=task.id,
        final_scheme=scheme,
        final_correct=result,
        evaluations=len(path),
        path=tuple(path),
        spent=merge_ledgers(spent),
    )


def build_zero_shot_prompt(task: Task, subtasks: Sequence[SubTask], current: SubTask) -> str:
    listing = "\n".join(f"{st.index}. {st.description}" for st in subtasks)
    return (
        f"The task is: {task.query}\n"
        f"It has been broken down into these sub-tasks:\n{listing}\n"
        f"The current sub-task to assess is: {current.description}\n"
        "Is this sub-task simple enough for a small on-device language model, "
        "or complex enough to require a large cloud model? "
        "Answer with exactly one word: simple or complex."
    )


def parse_difficulty_verdict(text: str) -> ModelTier | None:
    """Map a difficulty verdict to a tier; None when the verdict is unusable."""
    lowered = text.lower()
    has_simple = "simple" in lowered
    has_complex = "complex" in lowered
    if has_simple and not has_complex:
        return ModelTier.DEVICE
    if has_complex and not has_simple:
        return ModelTier.CLOUD
    return None


def zero_shot_baseline(
    task: Task,
    subtasks: Sequence[SubTask],
    pool: BackendPool,
    *,
    max_tokens: int = 16,
) -> tuple[AllocationScheme, CostLedger]:
    """Ask the cloud tier once per sub-task for a simple/complex verdict.

    Unparseable verdicts default the sub-task to the cloud with a warning.
    Returns the scheme together with the judging calls' ledger.
    """
    assignment: dict[int, ModelTier] = {}
    ledgers: list[CostLedger] = []
    for subtask in subtasks:
        request = ChatRequest(
            system=ZERO_SHOT_SYSTEM_PROMPT,
            user=build_zero_shot_prompt(task, subtasks, subtask),
            max_tokens=max_tokens,
        )
        response, ledger = pool.complete_priced(ModelTier.CLOUD, request)
        ledgers.append(ledger)
        tier = parse_difficulty_verdict(response.text)
        if tier is None:
            logger.warning(
                "task %s sub-task %d: unusable difficulty verdict %r, defaulting to cloud",
                task.id,
                subtask.index,
                response.text,
            )
            tier = ModelTier.CLOUD
        assignment[subtask.index] = tier
    return AllocationScheme(assignment), merge_ledgers(ledgers)


def zero_shot_search(
    task: Task,
    subtasks: Sequence[SubTask],
    graph: DependencyGraph,
    pool: BackendPool,
    *,
    max_tokens: int = 512,
    max_workers: int = 8,
) -> SearchOutcome:
    """Zero-shot judging followed by the single reasoning pass used for reporting."""
    scheme, judge_ledger = zero_shot_baseline(task, subtasks, pool)
    trace = run_on_graph(
        task, subtasks, graph, scheme, pool, max_tokens=max_tokens, max_workers=max_workers
    )
    return SearchOutcome(
        task_id=task.id,
        final_scheme=scheme,
        final_correct=trace.correct,
        evaluations=1,
        path=((scheme, trace.correct),),
        spent=judge_ledger + trace.total,
    )


def emit_adapter_dataset(
    outcomes: Sequence[SearchOutcome],
    subtasks_by_task: Mapping[str, Sequence[SubTask]],
) -> list[AdapterRecord]:
    """Labeled records from every outcome whose final scheme solved the task."""
    if not outcomes:
        raise EmptyDatasetError("no search outcomes supplied")
    records: list[AdapterRecord] = []
    skipped = 0
    for outcome in outcomes:
        if not outcome.final_correct:
            skipped += 1
            continue
        for subtask in subtasks_by_task[outcome.task_id]:
            tier = outcome.final_scheme.tier_of(subtask.index)
            records.append(
                AdapterRecord(
                    task_id=outcome.task_id,
                    subtask_index=subtask.index,
                    subtask_text=subtask.description,
                    label=0 if tier is ModelTier.DEVICE else 1,
                )
            )
    if skipped:
        logger.info("skipped %d outcome(s) whose final scheme stayed incorrect", skipped)
    if not records:
        raise EmptyDatasetError("every search outcome ended incorrect; nothing to emit")
    return records


def _scheme_to_json(scheme: AllocationScheme) -> dict[str, str]:
    return {str(i): scheme.tier_of(i).value for i in sorted(scheme.indices())}


def write_dataset_jsonl(records: Sequence[AdapterRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "task_id": r.task_id,
                        "subtask_index": r.subtask_index,
                        "text": r.subtask_text,
                        "label": r.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_dataset_jsonl(path: str | Path) -> list[AdapterRecord]:
    records: list[AdapterRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            records.append(
                AdapterRecord(
                    task_id=raw["task_id"],
                    subtask_index=int(raw["subtask_index"]),
                    subtask_text=raw["text"],
                    label=int(raw["label"]),
                )
            )
    return records


def write_audit_log(outcomes: Sequence[SearchOutcome], path: str | Path) -> None:
    """One JSON object per search outcome, including the full evaluation path."""
    with open(path, "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(
                json.dumps(
                    {
                        "task_id": o.task_id,
                        "final_scheme": _scheme_to_json(o.final_scheme),
                        "final_correct": o.final_correct,
                        "evaluations": o.evaluations,
                        "path": [
                            {"scheme": _scheme_to_json(s), "correct": c} for s, c in o.path
                        ],
                        "api_cents": round(o.spent.api_cents, 2),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
