"""Exception types shared across the package."""

from __future__ import annotations


class CellSenseError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(CellSenseError, ValueError):
    """Arguments violate a documented precondition."""


class FormatError(CellSenseError, ValueError):
    """A trace or fingerprint file is malformed.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotLocatableError(CellSenseError):
    """The estimator has no evidence to produce a location for this scan."""


class NumericError(CellSenseError, ArithmeticError):
    """A numerical routine failed (e.g. a non positive definite matrix)."""
