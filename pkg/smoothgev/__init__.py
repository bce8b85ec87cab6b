"""
smoothgev: spatially smooth GEV models for gridded annual maxima.
"""

from smoothgev.errors import (
    DataWarning,
    DegenerateTestWarning,
    DomainError,
    EstimationError,
    FitError,
    IngestionError,
    ScoreError,
    SingularPrecisionError,
    SmoothGevError,
    SpecError,
)
from smoothgev.fit import FitOptions, FitResult, fit_independent, fit_smooth
from smoothgev.gev import GevParams, Sample
from smoothgev.grid import GriddedDataset, build_neighborhood, build_penalty, ingest_dataset
from smoothgev.model import MODELS, ModelSpec, ParameterField, build_covariate, load_covariate

__version__ = "0.1.0"

__all__ = [
    "DataWarning",
    "DegenerateTestWarning",
    "DomainError",
    "EstimationError",
    "FitError",
    "FitOptions",
    "FitResult",
    "GevParams",
    "GriddedDataset",
    "IngestionError",
    "MODELS",
    "ModelSpec",
    "ParameterField",
    "Sample",
    "ScoreError",
    "SingularPrecisionError",
    "SmoothGevError",
    "SpecError",
    "build_covariate",
    "build_neighborhood",
    "build_penalty",
    "fit_independent",
    "fit_smooth",
    "ingest_dataset",
    "load_covariate",
]
