"""
Exceptions and warnings raised by smoothgev.
"""

from typing import Any, Optional

import numpy as np


class SmoothGevError(Exception):
    """Base class for every error raised by the package."""


class DomainError(SmoothGevError, ValueError):
    """Distribution arguments outside their domain (non-finite y, sigma <= 0, prob outside (0, 1))."""


class EstimationError(SmoothGevError, ValueError):
    """A point estimate cannot be formed from the sample."""


class IngestionError(SmoothGevError, ValueError):
    """Input tables violate the expected schema or lattice structure."""


class ScoreError(SmoothGevError, ValueError):
    """A scoring rule is undefined for the predictive distribution."""


class SpecError(SmoothGevError, ValueError):
    """Inconsistent model specification, shapes or inference arguments."""


class SingularPrecisionError(SmoothGevError, ValueError):
    """The precision matrix could not be factorized."""


class FitError(SmoothGevError, RuntimeError):
    """An optimizer stopped without converging.

    Carries the last iterate so callers can inspect or restart from it.
    """

    def __init__(
        self,
        message: str,
        last_iterate: Optional[np.ndarray] = None,
        diagnostics: Optional[dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics or {}


class DataWarning(UserWarning):
    """Input data was altered on the way in (dropped boxes, flagged residuals)."""


class DegenerateTestWarning(UserWarning):
    """A randomization test was run on an input where its assumptions fail."""
