"""Custom exception types for the calculator layer.

Calculators raise these; the CLI translates them into exit codes and JSON
error envelopes (see app.py).
"""
from __future__ import annotations


class LabError(Exception):
    """Base exception for the localization lab."""

    code = "lab_error"


class ValidationError(LabError):
    """Input validation failed."""

    code = "validation_error"


class ConfigError(LabError):
    """Experiment config could not be parsed or validated."""

    code = "config_error"

    def __init__(self, message: str, *, line: int | None = None, key: str | None = None):
        super().__init__(message)
        self.line = line
        self.key = key


class BudgetExceededError(LabError):
    """A vertex or walk-enumeration budget was exhausted."""

    code = "budget_exceeded"

    def __init__(self, message: str, *, last_completed: int | None = None):
        super().__init__(message)
        self.last_completed = last_completed


class NotCleanError(LabError):
    """Query reaches outside the boundary-clean region of a truncated graph."""

    code = "not_clean"


class SolverError(LabError):
    """Linear solve or eigensolver failure."""

    code = "solver_error"

    def __init__(self, message: str, *, trial: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.trial = trial
        self.residual = residual


class QuadratureError(LabError):
    """Adaptive quadrature did not converge."""

    code = "quadrature_error"


class InconclusiveError(LabError):
    """Finite data does not decide the question asked."""

    code = "inconclusive"


class DegenerateDataError(LabError):
    """Not enough non-trivial data to fit anything."""

    code = "degenerate_data"


# Errors that mean the numbers could not be produced (exit status 3).
NUMERIC_ERRORS = (
    BudgetExceededError,
    NotCleanError,
    SolverError,
    QuadratureError,
    InconclusiveError,
    DegenerateDataError,
)


__all__ = [
    "LabError",
    "ValidationError",
    "ConfigError",
    "BudgetExceededError",
    "NotCleanError",
    "SolverError",
    "QuadratureError",
    "InconclusiveError",
    "DegenerateDataError",
    "NUMERIC_ERRORS",
]
