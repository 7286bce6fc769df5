"""Calibration of credit-rating transition models driven by latent AR(1) factors."""

from importlib.metadata import PackageNotFoundError, version

from ._backend import name as backend
from .domain import (
    LatentPath,
    MigrationSeries,
    ModelParameters,
    ObservedFactors,
    RatingScheme,
    SignalPath,
    stationary_innovation_cov,
    validate_series,
)
from .errors import (
    CalibrationError,
    ConditioningError,
    ConfigError,
    DimensionError,
    NonConvergenceError,
    StationarityError,
    StepRejectionError,
    WeightCollapseError,
)

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = [
    "LatentPath",
    "MigrationSeries",
    "ModelParameters",
    "ObservedFactors",
    "RatingScheme",
    "SignalPath",
    "stationary_innovation_cov",
    "validate_series",
    "CalibrationError",
    "ConditioningError",
    "ConfigError",
    "DimensionError",
    "NonConvergenceError",
    "StationarityError",
    "StepRejectionError",
    "WeightCollapseError",
    "backend",
]
