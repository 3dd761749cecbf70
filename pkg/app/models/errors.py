"""
Exception hierarchy for the APE toolkit.

Every error raised by library code derives from ``ApeError``. The three
families below carry the CLI exit code. ``ApeError`` must not subclass
``ValueError``: pydantic would wrap it in a ``ValidationError``.
"""
from typing import Optional


class ApeError(Exception):
    """Root of all toolkit errors."""

    exit_code: int = 1


# ============ Parameter errors (exit 1) ============

class ParameterError(ApeError):
    """Invalid argument, hyperparameter, or spec string."""

    exit_code = 1


class ShapeError(ParameterError):
    """Array dimensions do not agree."""


class RangeError(ParameterError):
    """A requested evaluation point lies outside the supported range."""


class PreconditionError(ParameterError):
    """An operation was called on inputs it does not support."""


# ============ Data errors (exit 2) ============

class DataError(ApeError):
    """Problems with the input sample."""

    exit_code = 2


class RoleError(DataError):
    """Column-role mapping is incomplete or names a missing column."""


class ParseError(DataError):
    """A cell could not be read as a finite real number."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class SizeError(DataError):
    """Sample too small for the requested operation."""


# ============ Numeric errors (exit 3) ============

class NumericError(ApeError):
    """Numerical failure of an estimator or diagnostic."""

    exit_code = 3


class SingularityError(NumericError):
    """Rank-deficient design."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class DegenerateError(NumericError):
    """Zero variance where a positive one is required."""


class KnotError(NumericError):
    """Not enough distinct support to place spline knots."""


class BootstrapError(NumericError):
    """Too many bootstrap resamples failed."""


class DegenerateTargetWarning(UserWarning):
    """A learner was asked to fit a constant target."""
