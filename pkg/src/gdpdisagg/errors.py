# ==============================================================================
# gdpdisagg.errors: The Exception Hierarchy
#
# Every failure the library raises on purpose is a `DisaggError`. The tree is
# split in two so that the CLI can map failures onto exit codes without
# inspecting messages:
#
#   - `DataError`: the inputs (files, configuration, panels) are invalid.
#     The user must fix something. CLI exit status 1.
#   - `EstimationError`: the inputs were valid but a numerical procedure
#     could not produce a result. CLI exit status 2.
# ==============================================================================

from pathlib import Path
from typing import Optional


class DisaggError(Exception):
    """Base exception for every deliberate failure in `gdpdisagg`."""


# ==============================================================================
# Input Validation Errors
# ==============================================================================


class DataError(DisaggError):
    """Raised when inputs violate a documented precondition."""


class ParseError(DataError):
    """Base exception for all file ingestion errors."""

    def __init__(self, message: str, path: Optional[Path] = None):
        self.path = path
        super().__init__(message)


class FileAccessError(ParseError):
    """Raised when a file cannot be read due to permissions or existence issues."""


class InvalidFormatError(ParseError):
    """Raised when file content does not conform to the expected schema."""

    def __init__(
        self, message: str, path: Optional[Path] = None, row: Optional[int] = None
    ):
        self.row = row
        if row is not None:
            message = f"Row {row}: {message}"
        super().__init__(message, path=path)


class ConfigError(DataError):
    """Raised when a run configuration cannot be loaded or validated."""


class InsufficientHistoryError(DataError):
    """Raised when a panel is too short for the requested operation."""


class AlignmentError(DataError):
    """Raised when two time-indexed objects do not line up as required."""


class NonPositiveValueError(DataError):
    """Raised when a log transform meets a value that is not strictly positive."""


class DegenerateSeriesError(DataError):
    """Raised when a statistic is undefined because the input has no variation."""


class ConstantColumnError(DataError):
    """Raised when a level column cannot be standardized (zero dispersion)."""


class ColumnMismatchError(DataError):
    """Raised when prediction columns differ from the training columns."""

    def __init__(self, missing: list[str], extra: list[str]):
        self.missing = missing
        self.extra = extra
        super().__init__(
            "Column mismatch between training and prediction design. "
            f"Missing: {missing or 'none'}; extra: {extra or 'none'}."
        )


# ==============================================================================
# Numerical Failures
# ==============================================================================


class EstimationError(DisaggError):
    """Raised when a numerical procedure fails on valid inputs."""


class RankDeficientError(EstimationError):
    """Raised when a regression design is rank deficient."""


class ConvergenceError(EstimationError):
    """Raised when an iterative solver exhausts its iteration budget."""


class TrainingDivergedError(EstimationError):
    """Raised when every network training trial produced a non-finite loss."""


class DegenerateConstraintsError(EstimationError):
    """Raised when the reconciliation constraint system is singular."""


class ProportionalScalingError(EstimationError):
    """Raised when a within-quarter proportional factor is undefined."""


class ExpandingWindowError(EstimationError):
    """Raised when too many expanding-window steps fail."""
