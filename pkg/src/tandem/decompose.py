"""Query decomposition: meta-prompt with in-context exemplars, numbered-list parsing."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .backend import BackendPool, ChatRequest
from .core import CostLedger, ModelTier, SubTask, Task, validate_subtask_indices
from .errors import ConfigError, DecompositionParseError

logger = logging.getLogger(__name__)

MAX_SUBTASKS = 20

DECOMPOSE_SYSTEM_PROMPT = (
    "You break problems down into smaller steps. Follow the requested answer format exactly."
)

_ANSWER_FORMAT_BLOCK = """Answer Format: (Please write each broken-down question step on a separate line, starting with a number.)

To solve the question "xxx", we need to know:
"1. question step_1",
"2. question step_2",
"3. question step_3".
..."""

# Matches '1. step', '"1. step",' and similar numbered lines.
_NUMBERED_LINE = re.compile(r'^\s*"?(\d+)\.\s*(.+)$')


@dataclass(frozen=True)
class DecomposeExemplar:
    """A hand-written question with its step-by-step decomposition."""

    question: str
    steps: tuple[str, ...]

    def __post_init__(self):
        if not self.steps:
            raise ConfigError(f"exemplar {self.question!r}: steps must be nonempty")
        if any(not s.strip() for s in self.steps):
            raise ConfigError(f"exemplar {self.question!r}: every step must be nonempty")


def load_exemplars(path: str | Path) -> dict[str, list[DecomposeExemplar]]:
    """Load an exemplars file.

    Accepts either a bare JSON list of {question, steps[]} (applied to every
    category, keyed "") or an object mapping category name to such a list.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, list):
        raw = {"": raw}
    if not isinstance(raw, dict):
        raise ConfigError(f"exemplars file {path}: expected a JSON list or object")
    out: dict[str, list[DecomposeExemplar]] = {}
    for category, entries in raw.items():
        out[category] = [
            DecomposeExemplar(question=e["question"], steps=tuple(e["steps"])) for e in entries
        ]
    return out


def exemplars_for(exemplars: dict[str, list[DecomposeExemplar]], category: str) -> list[DecomposeExemplar]:
    """Category-specific exemplars, falling back to the uncategorized set."""
    if category in exemplars and exemplars[category]:
        return exemplars[category]
    return exemplars.get("", [])


def _render_exemplar(exemplar: DecomposeExemplar) -> str:
    lines = [f'To solve the question "{exemplar.question}", we need to know:']
    last = len(exemplar.steps)
    for i, step in enumerate(exemplar.steps, 1):
        lines.append(f'"{i}. {step}"{"." if i == last else ","}')
    return "\n".join(lines)


def build_decompose_prompt(task: Task, exemplars: list[DecomposeExemplar]) -> str:
    """Meta-prompt: problem-type line, exemplars, the command, the answer format."""
    if not exemplars:
        raise ConfigError("decomposition requires at least one exemplar")
    problem_type = task.category or "general"
    parts = [
        f"I will now give you a [Based on the type of problem]. The type of problem is {problem_type}. "
        "Please break this problem down into several easy-to-solve steps.",
        f"{len(exemplars)} examples are as follows:",
    ]
    parts.extend(_render_exemplar(ex) for ex in exemplars)
    parts.append(
        f"Now the command is {task.query}, please decompose it into easy-to-solve steps like the examples."
    )
    parts.append(_ANSWER_FORMAT_BLOCK)
    return "\n\n".join(parts)


def _clean_step(text: str) -> str:
    text = text.strip()
    if text.endswith(","):
        text = text[:-1].rstrip()
    if text.endswith("."):
        # Keep sentence periods; only drop the answer-format trailing '".'
        if text.endswith('".'):
            text = text[:-1]
    if text.endswith('"'):
        text = text[:-1].rstrip()
    return text


def parse_subtasks(response: str) -> list[SubTask]:
    """Extract numbered step lines and renumber them contiguously from 1."""
    steps: list[str] = []
    for line in response.splitlines():
        m = _NUMBERED_LINE.match(line)
        if not m:
            continue
        description = _clean_step(m.group(2))
        if description:
            steps.append(description)
    if not steps:
        raise DecompositionParseError(
            "no numbered sub-task lines found in model output", raw_response=response
        )
    if len(steps) > MAX_SUBTASKS:
        logger.warning("decomposition produced %d steps; truncating to %d", len(steps), MAX_SUBTASKS)
        steps = steps[:MAX_SUBTASKS]
    return [SubTask(index=i, description=s) for i, s in enumerate(steps, 1)]


def decompose(
    task: Task,
    exemplars: list[DecomposeExemplar],
    tier: ModelTier,
    pool: BackendPool,
    *,
    max_tokens: int = 512,
    temperature: float = 0.0,
) -> tuple[list[SubTask], CostLedger]:
    """Build the prompt, query the tier, parse sub-tasks. Returns the call's ledger too."""
    prompt = build_decompose_prompt(task, exemplars)
    request = ChatRequest(
        system=DECOMPOSE_SYSTEM_PROMPT,
        user=prompt,
        max_tokens=max_tokens,
        temperature=temperature,
    )
    response, ledger = pool.complete_priced(tier, request)
    try:
        subtasks = parse_subtasks(response.text)
    except DecompositionParseError as exc:
        raise DecompositionParseError(
            f"task {task.id!r}: {exc}", raw_response=exc.raw_response, task_id=task.id
        ) from None
    validate_subtask_indices(subtasks)
    return subtasks, ledger
