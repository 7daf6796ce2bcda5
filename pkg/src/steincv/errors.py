"""Exception hierarchy shared across the package."""

from __future__ import annotations

import numpy as np


class SteinCVError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SteinCVError, ValueError):
    """Invalid parameters, shapes or experiment configuration."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        details = []
        if field is not None:
            details.append(f"field '{field}'")
        if line is not None:
            details.append(f"line {line}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class IngestionError(SteinCVError):
    """A dataset file is missing or malformed."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class SamplerDivergenceError(SteinCVError):
    """A Markov chain produced a non-finite state or gradient."""

    def __init__(self, message: str, state=None, step: int | None = None,
                 chain_index: int | None = None):
        self.state = None if state is None else np.array(state, copy=True)
        self.step = step
        self.chain_index = chain_index
        if chain_index is not None:
            message = f"{message} [chain {chain_index}]"
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)


class NumericError(SteinCVError, FloatingPointError):
    """A non-finite intermediate value appeared in a computation."""

    def __init__(self, message: str, point=None):
        self.point = None if point is None else np.array(point, copy=True)
        super().__init__(message)


class UnsupportedActivationError(SteinCVError, ValueError):
    """An activation lacks the smoothness a derivative request needs."""


class StageError(SteinCVError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class RangeError(SteinCVError, IndexError):
    """A lag, index or truncation point lies outside its valid range."""
