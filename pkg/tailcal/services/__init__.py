"""Scoring, calibration, loss and model-family services"""

from .errors import (
    TailCalError,
    ConfigError,
    DataError,
    DistributionError,
    ScoringError,
    CalibrationError,
    LossError,
    OptimizationError,
    TrainingError,
    StorageError,
)
from .result import Result, from_optional, from_exception, collect, partition

__all__ = [
    # Base error
    "TailCalError",
    # Error families
    "ConfigError",
    "DataError",
    "DistributionError",
    "ScoringError",
    "CalibrationError",
    "LossError",
    "OptimizationError",
    "TrainingError",
    "StorageError",
    # Result type
    "Result",
    "from_optional",
    "from_exception",
    "collect",
    "partition",
]
