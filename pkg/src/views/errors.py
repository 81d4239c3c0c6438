"""Exception types shared across the pipeline."""

from __future__ import annotations


class ViewsError(Exception):
    """Base class for all package-specific errors."""


class CorpusParseError(ViewsError):
    """A corpus file line failed to parse or validate.

    Carries the 1-based line number so callers can point at the offending
    record.
    """

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class EntityParseError(ViewsError):
    """An entity string violated the canonical format.

    ``offset`` is the character position where scanning failed and ``raw``
    is the full input, kept so builder-side callers can log what a model
    actually emitted.
    """

    def __init__(self, message: str, offset: int, raw: str):
        self.offset = offset
        self.raw = raw
        super().__init__(f"{message} (at offset {offset})")


class RaterParseError(ViewsError):
    """A quality-rater reply had no recognizable Yes/No verdict."""

    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"unparseable rater reply: {raw[:200]!r}")


class TransportError(ViewsError):
    """A backend call failed after exhausting retries."""

    def __init__(self, message: str, retries: int = 0):
        self.retries = retries
        super().__init__(message)


class CassetteMissError(ViewsError):
    """A replay client was asked for a prompt it has no recording of."""

    def __init__(self, prompt_hash: str):
        self.prompt_hash = prompt_hash
        super().__init__(f"no recorded reply for prompt hash {prompt_hash}")


class EmptyContextError(ViewsError):
    """Knowledge retrieval produced no usable passage."""


class DataError(ViewsError):
    """A sample is missing data a stage needs (names the sample)."""


class LeakageError(ViewsError):
    """A time split placed evaluation material on the training side."""


class StateError(ViewsError):
    """An operation was applied to an object in the wrong state."""


class StageError(ViewsError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


class StrictModeError(ViewsError):
    """A direction assertion failed while running with --strict."""


class SpecValidationError(ViewsError):
    """An experiment spec failed fail-fast validation."""
