"""On-graph reasoning: run batches in order, batch members concurrently.

Each sub-task sees the answers of exactly its direct graph predecessors. A
batch contributes the maximum of its members' latencies to the task's wall
clock (members run in parallel), and one final aggregation query closes out
every task.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .backend import BackendPool, ChatRequest
from .core import (
    AllocationScheme,
    CostLedger,
    ModelTier,
    SubTask,
    Task,
    merge_ledgers,
    run_checker,
)
from .errors import TandemError
from .schedule import DependencyGraph

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 512
DEFAULT_TEMPERATURE = 0.0

SOLVED_HEADER = (
    "So far, the answers to the resolved sub-questions are as follows: "
    "The format is Sub-question-Id: xxx; Sub-question: xxx; Answer: xxx."
)

# Leading markdown decoration: heading/quote/bullet markers followed by whitespace.
_MARKDOWN_PREFIX = re.compile(r"^(?:[#>]+|\*+|-)\s+")


@dataclass(frozen=True)
class StepResult:
    """Outcome of one sub-task call."""

    index: int
    tier_used: ModelTier
    answer: str
    token_probs: tuple[float, ...]
    ledger: CostLedger


@dataclass(frozen=True)
class TaskTrace:
    """Everything recorded about one task run.

    ``total`` is the component-wise merge of every call's ledger (resource
    accounting), while ``wall_seconds`` models true latency: per batch the
    maximum member time, summed across batches plus the final query.
    """

    task_id: str
    scheme: AllocationScheme
    steps: tuple[StepResult, ...]
    final_answer: str
    correct: bool
    total: CostLedger
    wall_seconds: float
    final_tier: ModelTier | None = None
    final_ledger: CostLedger = CostLedger()
    error: str | None = None


def step_system_prompt(task: Task) -> str:
    return (
        "Here is a problem. I will first provide the problem to set the context. "
        "Then, I will ask a specific question that requires you to use the information "
        "from the problem description, along with calculation and reasoning, to solve it.\n"
        f"Problem: {task.query}\n\n"
        "I have broken this question down into several smaller questions. I will assign "
        "you sub-questions one by one, and provide the results of previous sub-questions "
        "as a reference for your reasoning."
    )


def _flatten(text: str) -> str:
    return " ".join(text.split())


def _solved_line(result: StepResult, descriptions: Mapping[int, str]) -> str:
    description = _flatten(descriptions.get(result.index, ""))
    return (
        f"Sub-question-Id: {result.index}; Sub-question: {description}; "
        f"Answer: {_flatten(result.answer)}"
    )


def assemble_step_prompt(
    task: Task,
    subtask: SubTask,
    predecessor_results: Sequence[StepResult],
    all_solved: Sequence[StepResult],
    subtasks: Sequence[SubTask],
) -> str:
    """Prompt for one sub-task: its direct predecessors' answers plus the question."""
    solved_indices = {r.index for r in all_solved}
    missing = {r.index for r in predecessor_results} - solved_indices
    if missing:
        raise ValueError(f"predecessor results {sorted(missing)} are not among solved steps")
    descriptions = {st.index: st.description for st in subtasks}
    lines: list[str] = []
    if predecessor_results:
        ordered = sorted(predecessor_results, key=lambda r: r.index)
        lines.append(SOLVED_HEADER)
        lines.extend(_solved_line(r, descriptions) for r in ordered)
        ids = ", ".join(str(r.index) for r in ordered)
        lines.append(
            f"Among them, sub-questions {ids} are directly related to this sub-question, "
            "so please pay special attention to them."
        )
    lines.append(f"The sub-question to solve now is {subtask.index}: {subtask.description}")
    lines.append("Based on the information above, please provide a concise and clear answer.")
    return "\n".join(lines)


def final_answer_prompt(task: Task, steps: Sequence[StepResult], subtasks: Sequence[SubTask]) -> str:
    descriptions = {st.index: st.description for st in subtasks}
    lines = [SOLVED_HEADER]
    lines.extend(_solved_line(r, descriptions) for r in sorted(steps, key=lambda r: r.index))
    lines.append(
        "Now, based on all the sub-question results above, please provide the final answer "
        f"to the original question: {task.query}"
    )
    lines.append("Respond with only the final answer on the last line.")
    return "\n".join(lines)


def extract_answer(text: str) -> str:
    """Last nonempty line, stripped of markdown decoration."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        return ""
    line = lines[-1].strip().strip("`")
    line = _MARKDOWN_PREFIX.sub("", line)
    return line.replace("**", "").strip()


def judge(final_answer: str, task: Task) -> bool:
    """Apply the task's checker to the extracted answer."""
    return run_checker(task.checker, extract_answer(final_answer), task.ground_truth)


def final_call_tier(scheme: AllocationScheme, graph: DependencyGraph) -> ModelTier:
    """Tier for the final aggregation query: majority of the deepest batch, ties to device."""
    if not graph.batches:
        return ModelTier.DEVICE
    deepest = graph.batches[-1]
    cloud = sum(1 for i in deepest if scheme.tier_of(i) is ModelTier.CLOUD)
    return ModelTier.CLOUD if cloud > len(deepest) - cloud else ModelTier.DEVICE


def run_on_graph(
    task: Task,
    subtasks: Sequence[SubTask],
    graph: DependencyGraph,
    scheme: AllocationScheme,
    pool: BackendPool,
    *,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    temperature: float = DEFAULT_TEMPERATURE,
    max_workers: int = 8,
    cached_steps: Mapping[int, StepResult] | None = None,
) -> TaskTrace:
    """Execute one task over its dependency graph under the given allocation.

    ``cached_steps`` lets a caller reuse previously computed device-tier
    results: a cached step is adopted verbatim (answer, probabilities, ledger)
    instead of issuing a new call, so repeated evaluations of allocation
    schemes only pay for newly cloud-assigned sub-tasks.
    """
    scheme.validate_domain(st.index for st in subtasks)
    cached_steps = cached_steps or {}
    system = step_system_prompt(task)
    results: dict[int, StepResult] = {}
    wall = 0.0

    def run_step(index: int, prompt: str) -> StepResult:
        tier = scheme.tier_of(index)
        request = ChatRequest(
            system=system,
            user=prompt,
            max_tokens=max_tokens,
            temperature=temperature,
            want_token_probs=True,
        )
        response, ledger = pool.complete_priced(tier, request)
        return StepResult(
            index=index,
            tier_used=tier,
            answer=response.text,
            token_probs=response.token_probs,
            ledger=ledger,
        )

    by_index = {st.index: st for st in subtasks}
    try:
        for batch in graph.batches:
            pending: list[tuple[int, str]] = []
            for index in batch:
                if index in cached_steps and scheme.tier_of(index) is ModelTier.DEVICE:
                    results[index] = cached_steps[index]
                    continue
                preds = [results[p] for p in graph.predecessors(index)]
                prompt = assemble_step_prompt(
                    task, by_index[index], preds, list(results.values()), subtasks
                )
                pending.append((index, prompt))
            if pending:
                with ThreadPoolExecutor(max_workers=min(max_workers, len(pending))) as executor:
                    futures = {idx: executor.submit(run_step, idx, prompt) for idx, prompt in pending}
                    for idx in sorted(futures):
                        results[idx] = futures[idx].result()
            wall += max((results[i].ledger.wall_seconds for i in batch), default=0.0)

        ordered_steps = tuple(results[i] for i in sorted(results))
        final_tier = final_call_tier(scheme, graph)
        final_request = ChatRequest(
            system=system,
            user=final_answer_prompt(task, ordered_steps, subtasks),
            max_tokens=max_tokens,
            temperature=temperature,
        )
        final_response, final_ledger = pool.complete_priced(final_tier, final_request)
        wall += final_response.elapsed_seconds
        correct = judge(final_response.text, task)
        total = merge_ledgers([s.ledger for s in ordered_steps] + [final_ledger])
        return TaskTrace(
            task_id=task.id,
            scheme=scheme,
            steps=ordered_steps,
            final_answer=final_response.text,
            correct=correct,
            total=total,
            wall_seconds=wall,
            final_tier=final_tier,
            final_ledger=final_ledger,
        )
    except TandemError as exc:
        logger.warning("task %s failed during on-graph reasoning: %s", task.id, exc)
        partial = tuple(results[i] for i in sorted(results))
        return TaskTrace(
            task_id=task.id,
            scheme=scheme,
            steps=partial,
            final_answer="",
            correct=False,
            total=merge_ledgers([s.ledger for s in partial]),
            wall_seconds=wall,
            error=str(exc),
        )
