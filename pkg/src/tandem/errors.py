"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TandemError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TandemError):
    """Invalid or missing configuration (profiles, exemplars, adapter shapes)."""


class TransportError(TandemError):
    """Network-level failure talking to a backend; retried before surfacing."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class DecodeError(TandemError):
    """Backend returned a response this client cannot interpret. Never retried."""


class CapabilityError(TandemError):
    """Backend or script lacks a capability the caller requested."""


class DecompositionParseError(TandemError):
    """Model output contained no parseable numbered sub-task lines."""

    def __init__(self, message: str, raw_response: str, task_id: str | None = None):
        super().__init__(message)
        self.raw_response = raw_response
        self.task_id = task_id


class SchemeDomainError(TandemError):
    """Two allocation schemes (or a scheme and a task) disagree on sub-task indices."""

    def __init__(self, missing: set[int], extra: set[int]):
        super().__init__(
            f"allocation domain mismatch: missing indices {sorted(missing)}, "
            f"unexpected indices {sorted(extra)}"
        )
        self.missing = frozenset(missing)
        self.extra = frozenset(extra)


class BenchmarkFormatError(TandemError):
    """A benchmark JSONL file violated the task schema."""


class EmptyDatasetError(TandemError):
    """No records available where at least one was required."""


class TrainingDivergedError(TandemError):
    """Loss became non-finite during adapter training."""

    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch
