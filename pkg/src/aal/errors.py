"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AALError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AALError, ValueError):
    """Invalid configuration value or inconsistent settings."""


class PreconditionError(AALError, ValueError):
    """An operation was called on a state that violates its precondition."""


class ParseError(AALError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedOperation(AALError, TypeError):
    """The operation does not apply to this model family or task."""


class TrainingDiverged(AALError, ArithmeticError):
    """Loss or parameters became non-finite during training."""


class InsufficientData(AALError, ValueError):
    """Too few labeled samples to train."""
