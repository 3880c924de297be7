#!/usr/bin/env python3
"""
Exception hierarchy for the sampling package.

Every error carries optional context (the epoch it happened at, a mapping of
details, the underlying exception) and renders it the same way
ConfigurationError renders the paths it searched.
"""

from typing import Any, Dict, Optional


class SamplingError(Exception):
    """
    Base class for numerical and data errors raised by the samplers.

    Provides the epoch and a details mapping so callers (the CLI, the
    replicate commands) can report failures without parsing messages.
    """
    def __init__(self, message: str, epoch: Optional[int] = None,
                 details: Optional[Dict[str, Any]] = None,
                 original_error: Optional[Exception] = None):
        super().__init__(message)
        self.epoch = epoch
        self.details = details or {}
        self.original_error = original_error

    def __str__(self) -> str:
        msg = super().__str__()
        if self.epoch is not None:
            msg += f" (epoch {self.epoch})"
        if self.details:
            msg += "\n\nDetails:\n"
            for key, value in self.details.items():
                msg += f"  - {key}: {value}\n"
        if self.original_error:
            msg += f"\nOriginal error: {self.original_error}"
        return msg


class NotPositiveDefinite(SamplingError):
    """A Cholesky pivot was not strictly positive."""


class InsufficientSamples(SamplingError):
    """Fewer samples than an estimator needs."""


class EmptyBatch(SamplingError):
    """A minibatch gradient was requested for an empty index list."""


class EmptyTrace(SamplingError):
    """A summary statistic was requested over no samples."""


class ParseError(SamplingError):
    """A CSV cell could not be read as a number."""
    def __init__(self, message: str, row: int, column: int,
                 original_error: Optional[Exception] = None):
        super().__init__(message, details={"row": row, "column": column},
                         original_error=original_error)
        self.row = row
        self.column = column


class LabelDomainError(SamplingError):
    """Labels outside {0, 1} (or {-1, 1})."""


class SamplerDivergence(SamplingError):
    """The chain left the region where its arithmetic is meaningful."""


class NonFiniteValue(SamplerDivergence):
    """A log-likelihood, gradient or energy evaluated to inf or NaN."""


class ThermostatBlowup(SamplerDivergence):
    """The Nose-Poincare thermostat update has no admissible solution."""
