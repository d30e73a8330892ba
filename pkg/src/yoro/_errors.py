"""
Exception hierarchy for yoro.

Every error raised by the package derives from :class:`YoroError`, which
keeps the structured context of the failure next to the message.
"""

from typing import Any


class YoroError(Exception):
    """Base exception raised by yoro.

    Parameters
    ----------
    message : str
        Human readable description.
    **context
        Structured details (shapes, indices, paths) kept on ``self.context``.
    """

    def __init__(self, message: str, **context: Any):
        self.context = context
        super().__init__(message)


class DimensionError(YoroError):
    """Operand shapes are incompatible."""


class ContractError(YoroError):
    """A documented precondition was violated by the caller."""


class NumericError(YoroError):
    """A non-finite value was produced or consumed."""


class StateError(YoroError):
    """An object is not in the state the requested operation needs."""


class ValidationError(YoroError):
    """A value failed validation (degenerate box, bad grid, ...)."""


class InputError(YoroError):
    """User-supplied input cannot be processed."""


class GenerationError(YoroError):
    """The synthetic generator could not satisfy its constraints."""


class IngestError(YoroError):
    """Too many annotation records were rejected."""


class CheckpointError(YoroError):
    """A checkpoint file is malformed or incompatible."""


class ConfigError(YoroError):
    """A configuration file or value is invalid."""
