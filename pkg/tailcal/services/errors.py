"""
tailcal Error Hierarchy

Defines all custom exceptions used throughout tailcal.
Follows a hierarchical structure for granular error handling.

Error Hierarchy:
    TailCalError (base)
    ├── ConfigError
    ├── DataError
    │   ├── CsvParseError
    │   ├── NegativeWindError
    │   └── SchemaError
    ├── DistributionError
    │   ├── UnsupportedDistributionError
    │   ├── DomainError
    │   └── InvalidParameterError
    ├── ScoringError
    │   ├── QuadratureNotConvergedError
    │   └── EnsembleSizeError
    ├── CalibrationError
    │   ├── DegenerateExceedanceError
    │   ├── PreconditionError
    │   └── EmptyPitSetError
    ├── LossError
    │   ├── IncompatibleForecastError
    │   └── NonDifferentiableConfigurationError
    ├── OptimizationError
    │   ├── ObjectiveNotFiniteError
    │   └── OptimizerAbortError
    ├── TrainingError
    │   ├── DivergenceError
    │   ├── UnknownStationError
    │   └── ShapeMismatchError
    └── StorageError

Usage:
    from tailcal.services.errors import CalibrationError, DegenerateExceedanceError

    raise DegenerateExceedanceError(
        "Total forecast exceedance probability is zero",
        context={"threshold": 12.5, "cases": 4}
    )

    try:
        value = tmcb(forecasts, threshold)
    except CalibrationError as e:  # Catches all calibration errors
        logger.error("tmcb_failed", error=str(e))
"""

from typing import Any, Dict, Optional, Sequence


class TailCalError(Exception):
    """
    Base exception for all tailcal errors.

    Attributes:
        message: Human-readable error description
        context: Additional error context (threshold, station, iteration, ...)
    """

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.context = context or {}
        super().__init__(self._format_message())

    def _format_message(self) -> str:
        """Format error message with context."""
        if not self.context:
            return self.message

        context_str = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} [{context_str}]"

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(message={self.message!r}, context={self.context!r})"


# ============================================================================
# Configuration Errors
# ============================================================================

class ConfigError(TailCalError):
    """
    Configuration-related errors.

    Raised when:
    - Configuration files are missing or invalid
    - Environment variables are not set
    - A LossSpec / OptimizerConfig / SynthConfig fails validation
    - CLI flags are inconsistent
    """
    pass


# ============================================================================
# Data Errors
# ============================================================================

class DataError(TailCalError):
    """Base class for weather data ingestion and persistence errors."""
    pass


class CsvParseError(DataError):
    """
    A weather CSV row could not be parsed.

    Example:
        raise CsvParseError(line=14, column="ens_sd", reason="not a number")
    """

    def __init__(
        self,
        message: str = "Malformed CSV row",
        line: Optional[int] = None,
        column: Optional[str] = None,
        reason: Optional[str] = None,
        **kwargs
    ):
        context = kwargs
        if line is not None:
            context["line"] = line
        if column is not None:
            context["column"] = column
        if reason is not None:
            context["reason"] = reason

        super().__init__(message=message, context=context)


class NegativeWindError(DataError):
    """A wind quantity (ens_mean, ens_sd, obs) is negative."""
    pass


class SchemaError(DataError):
    """Model file is corrupted, has the wrong schema or an unknown schema_version."""
    pass


class InsufficientDataError(DataError):
    """Too few observations for a station (clustering features) or for a split."""
    pass


# ============================================================================
# Distribution Errors
# ============================================================================

class DistributionError(TailCalError):
    """Base class for predictive distribution errors."""
    pass


class UnsupportedDistributionError(DistributionError):
    """Operation requires a density (or other capability) the distribution lacks."""
    pass


class DomainError(DistributionError):
    """Argument outside the operation's domain (e.g. quantile level not in (0, 1))."""
    pass


class InvalidParameterError(DistributionError):
    """Distribution constructed with invalid parameters (sigma <= 0, weights not summing to 1, ...)."""
    pass


# ============================================================================
# Scoring Errors
# ============================================================================

class ScoringError(TailCalError):
    """Base class for scoring rule errors."""
    pass


class QuadratureNotConvergedError(ScoringError):
    """Adaptive quadrature did not meet its tolerance within the iteration budget."""
    pass


class EnsembleSizeError(ScoringError):
    """Ensemble too small for the requested score (fair CRPS needs M >= 2)."""
    pass


# ============================================================================
# Calibration Errors
# ============================================================================

class CalibrationError(TailCalError):
    """Base class for calibration diagnostic errors."""
    pass


class DegenerateExceedanceError(CalibrationError):
    """Sum of forecast exceedance probabilities is zero, so R-hat is undefined."""
    pass


class PreconditionError(CalibrationError):
    """Operation precondition violated (e.g. CPIT requested for y <= t)."""
    pass


class EmptyPitSetError(CalibrationError):
    """A miscalibration measure was requested over an empty set of PIT/CPIT values."""
    pass


# ============================================================================
# Loss Errors
# ============================================================================

class LossError(TailCalError):
    """Base class for training objective errors."""
    pass


class IncompatibleForecastError(LossError):
    """Forecast family does not match the loss's base score kind."""
    pass


class NonDifferentiableConfigurationError(LossError):
    """Gradient requested for a configuration without a differentiable path."""
    pass


# ============================================================================
# Optimization Errors
# ============================================================================

class OptimizationError(TailCalError):
    """Base class for optimizer errors."""
    pass


class ObjectiveNotFiniteError(OptimizationError):
    """
    Objective returned NaN or infinity during iteration.

    Example:
        raise ObjectiveNotFiniteError(iteration=12, point=[0.1, 1.2])
    """

    def __init__(
        self,
        message: str = "Objective is not finite",
        iteration: Optional[int] = None,
        point: Optional[Sequence[float]] = None,
        **kwargs
    ):
        context = kwargs
        if iteration is not None:
            context["iteration"] = iteration
        if point is not None:
            context["point"] = [round(float(p), 6) for p in point]

        super().__init__(message=message, context=context)


class OptimizerAbortError(OptimizationError):
    """Optimizer aborted; context carries the cluster id and the iteration trace tail."""
    pass


# ============================================================================
# Training Errors
# ============================================================================

class TrainingError(TailCalError):
    """Base class for network training errors."""
    pass


class DivergenceError(TrainingError):
    """Training loss became NaN; context carries epoch and batch index."""
    pass


class UnknownStationError(TrainingError):
    """Station index is not covered by the embedding table."""
    pass


class ShapeMismatchError(TrainingError):
    """Input, tape or gradient shapes do not agree with the network."""
    pass


# ============================================================================
# Storage Errors
# ============================================================================

class StorageError(TailCalError):
    """Run directory or artifact could not be written."""
    pass


# ============================================================================
# Error Factory Functions
# ============================================================================

def unknown_station(station: int, station_count: int) -> UnknownStationError:
    """
    Factory function for UnknownStationError.

    Args:
        station: Offending station index
        station_count: Number of rows in the embedding table

    Returns:
        UnknownStationError instance
    """
    return UnknownStationError(
        message=f"Unknown station index: {station}",
        context={"station": station, "station_count": station_count}
    )


def degenerate_exceedance(threshold: float, cases: int) -> DegenerateExceedanceError:
    """
    Factory function for DegenerateExceedanceError.

    Args:
        threshold: Threshold t
        cases: Number of forecast cases

    Returns:
        DegenerateExceedanceError instance
    """
    return DegenerateExceedanceError(
        message="Forecast exceedance probabilities sum to zero",
        context={"threshold": threshold, "cases": cases}
    )
