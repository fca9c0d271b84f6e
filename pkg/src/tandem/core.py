"""Shared domain types: tasks, sub-tasks, model tiers, allocation schemes, cost ledgers.

Everything here is an immutable value. Pipeline stages construct new values
instead of mutating, so instances are safe to share across worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import SchemeDomainError

NUMERIC_TOLERANCE = 1e-6


class ModelTier(Enum):
    """The two execution tiers: a local small model and a billed cloud model."""

    DEVICE = "device"
    CLOUD = "cloud"


class Checker(Enum):
    """How a final answer is compared against a task's ground truth.

    EXACT compares whitespace-trimmed strings. NUMERIC parses both sides as
    decimals and compares with absolute tolerance ``NUMERIC_TOLERANCE``.
    CONTAINS tests ground-truth substring presence in the answer.
    """

    EXACT = "exact"
    NUMERIC = "numeric"
    CONTAINS = "contains"


@dataclass(frozen=True)
class Task:
    """One user query with the information needed to verify a final answer."""

    id: str
    query: str
    category: str = ""
    ground_truth: str = ""
    checker: Checker = Checker.EXACT

    def __post_init__(self):
        if not self.id:
            raise ValueError("task id must be nonempty")
        if not self.query:
            raise ValueError(f"task {self.id!r}: query must be nonempty")


@dataclass(frozen=True)
class SubTask:
    """One unit of a decomposed query. Indices run 1..k within a task."""

    index: int
    description: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"sub-task index must be >= 1, got {self.index}")
        if not self.description.strip():
            raise ValueError(f"sub-task {self.index}: description must be nonempty")


def validate_subtask_indices(subtasks: Sequence[SubTask]) -> None:
    """Raise if indices are not the contiguous sequence 1..k."""
    indices = [st.index for st in subtasks]
    expected = list(range(1, len(subtasks) + 1))
    if indices != expected:
        raise ValueError(f"sub-task indices must be contiguous 1..{len(subtasks)}, got {indices}")


@dataclass(frozen=True)
class AllocationScheme:
    """Total map from sub-task index to the tier that answers it."""

    assignment: Mapping[int, ModelTier]

    def __post_init__(self):
        object.__setattr__(self, "assignment", dict(self.assignment))

    def indices(self) -> frozenset[int]:
        return frozenset(self.assignment)

    def tier_of(self, index: int) -> ModelTier:
        return self.assignment[index]

    def indices_of(self, tier: ModelTier) -> list[int]:
        return sorted(i for i, t in self.assignment.items() if t is tier)

    def count(self, tier: ModelTier) -> int:
        return sum(1 for t in self.assignment.values() if t is tier)

    def device_fraction(self) -> float:
        if not self.assignment:
            return 0.0
        return self.count(ModelTier.DEVICE) / len(self.assignment)

    def reassigned(self, moves: Mapping[int, ModelTier]) -> "AllocationScheme":
        """New scheme with the given indices moved to new tiers."""
        unknown = set(moves) - set(self.assignment)
        if unknown:
            raise SchemeDomainError(missing=set(), extra=unknown)
        merged = dict(self.assignment)
        merged.update(moves)
        return AllocationScheme(merged)

    def validate_domain(self, indices: Iterable[int]) -> None:
        """Raise unless this scheme covers exactly the given index set."""
        want = set(indices)
        have = set(self.assignment)
        if want != have:
            raise SchemeDomainError(missing=want - have, extra=have - want)


def uniform_scheme(indices: Iterable[int], tier: ModelTier) -> AllocationScheme:
    return AllocationScheme({i: tier for i in indices})


def scheme_distance(a: AllocationScheme, b: AllocationScheme) -> int:
    """Hamming distance between two schemes over the same index set."""
    a_idx, b_idx = a.indices(), b.indices()
    if a_idx != b_idx:
        raise SchemeDomainError(missing=a_idx - b_idx, extra=b_idx - a_idx)
    return sum(1 for i in a_idx if a.tier_of(i) is not b.tier_of(i))


@dataclass(frozen=True)
class CostLedger:
    """Resource accounting for one or more model calls.

    Cents are kept at full precision here; rounding to two decimals happens
    only when a report is emitted, so summed ledgers never drift.
    """

    wall_seconds: float = 0.0
    api_cents: float = 0.0
    device_calls: int = 0
    cloud_calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.wall_seconds < 0 or self.api_cents < 0:
            raise ValueError("wall_seconds and api_cents must be nonnegative")
        if min(self.device_calls, self.cloud_calls, self.prompt_tokens, self.completion_tokens) < 0:
            raise ValueError("call and token counters must be nonnegative")

    def __add__(self, other: "CostLedger") -> "CostLedger":
        return CostLedger(
            wall_seconds=self.wall_seconds + other.wall_seconds,
            api_cents=self.api_cents + other.api_cents,
            device_calls=self.device_calls + other.device_calls,
            cloud_calls=self.cloud_calls + other.cloud_calls,
            prompt_tokens=self.prompt_tokens + other.prompt_tokens,
            completion_tokens=self.completion_tokens + other.completion_tokens,
        )


ZERO_LEDGER = CostLedger()


def merge_ledgers(parts: Sequence[CostLedger]) -> CostLedger:
    """Component-wise sum; the empty list yields the zero ledger.

    Real-valued components are summed with ``math.fsum`` so the result is
    identical for any permutation of ``parts``.
    """
    if not parts:
        return ZERO_LEDGER
    return CostLedger(
        wall_seconds=math.fsum(p.wall_seconds for p in parts),
        api_cents=math.fsum(p.api_cents for p in parts),
        device_calls=sum(p.device_calls for p in parts),
        cloud_calls=sum(p.cloud_calls for p in parts),
        prompt_tokens=sum(p.prompt_tokens for p in parts),
        completion_tokens=sum(p.completion_tokens for p in parts),
    )


@dataclass(frozen=True)
class Metrics:
    """Suite-level outcome: accuracy plus mean per-task costs and device-usage shares."""

    accuracy: float
    mean_wall_seconds: float
    mean_api_cents: float
    slm_time_fraction: float
    slm_subtask_fraction: float


def run_checker(checker: Checker, answer: str, ground_truth: str) -> bool:
    """Apply one checker to an already-extracted answer string."""
    if checker is Checker.EXACT:
        return answer.strip() == ground_truth.strip()
    if checker is Checker.NUMERIC:
        try:
            got = float(answer.strip())
            want = float(ground_truth.strip())
        except ValueError:
            return False
        return abs(got - want) <= NUMERIC_TOLERANCE
    if checker is Checker.CONTAINS:
        return ground_truth in answer
    raise ValueError(f"unknown checker {checker!r}")
