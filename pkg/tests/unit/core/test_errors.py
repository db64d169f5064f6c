"""
Unit tests for the error hierarchy

Tests tailcal/services/errors.py:
- TailCalError message and context formatting
- Subclass relationships used by except clauses
- Structured constructors and factory functions
"""

import pytest

from tailcal.services.errors import (
    CalibrationError,
    ConfigError,
    CsvParseError,
    DataError,
    DegenerateExceedanceError,
    DistributionError,
    DivergenceError,
    DomainError,
    EmptyPitSetError,
    EnsembleSizeError,
    IncompatibleForecastError,
    InsufficientDataError,
    InvalidParameterError,
    LossError,
    NegativeWindError,
    NonDifferentiableConfigurationError,
    ObjectiveNotFiniteError,
    OptimizationError,
    OptimizerAbortError,
    PreconditionError,
    QuadratureNotConvergedError,
    SchemaError,
    ScoringError,
    ShapeMismatchError,
    StorageError,
    TailCalError,
    TrainingError,
    UnknownStationError,
    UnsupportedDistributionError,
    degenerate_exceedance,
    unknown_station,
)


class TestTailCalError:
    """Test the base exception."""

    def test_message_only(self):
        """Test a bare message formats as itself."""
        error = TailCalError("Something failed")

        assert str(error) == "Something failed"
        assert error.message == "Something failed"
        assert error.context == {}

    def test_context_is_appended(self):
        """Test context renders as [k=v, ...] in insertion order."""
        error = TailCalError("Fit failed", context={"cluster": 2, "iteration": 40})

        assert str(error) == "Fit failed [cluster=2, iteration=40]"

    def test_repr(self):
        """Test repr names the class, message and context."""
        error = ConfigError("bad", context={"key": "gamma"})

        assert repr(error) == "ConfigError(message='bad', context={'key': 'gamma'})"

    def test_catchable_as_exception(self):
        """Test tailcal errors are ordinary exceptions."""
        with pytest.raises(Exception):
            raise StorageError("disk full")


class TestHierarchy:
    """Test subclass relationships."""

    @pytest.mark.parametrize("cls,parent", [
        (ConfigError, TailCalError),
        (CsvParseError, DataError),
        (NegativeWindError, DataError),
        (SchemaError, DataError),
        (InsufficientDataError, DataError),
        (UnsupportedDistributionError, DistributionError),
        (DomainError, DistributionError),
        (InvalidParameterError, DistributionError),
        (QuadratureNotConvergedError, ScoringError),
        (EnsembleSizeError, ScoringError),
        (DegenerateExceedanceError, CalibrationError),
        (PreconditionError, CalibrationError),
        (EmptyPitSetError, CalibrationError),
        (IncompatibleForecastError, LossError),
        (NonDifferentiableConfigurationError, LossError),
        (ObjectiveNotFiniteError, OptimizationError),
        (OptimizerAbortError, OptimizationError),
        (DivergenceError, TrainingError),
        (UnknownStationError, TrainingError),
        (ShapeMismatchError, TrainingError),
        (StorageError, TailCalError),
    ])
    def test_parent(self, cls, parent):
        """Test each error is caught by its family and the base."""
        assert issubclass(cls, parent)
        assert issubclass(cls, TailCalError)

    def test_family_catch(self):
        """Test a calibration except clause catches its subclasses only."""
        with pytest.raises(CalibrationError):
            raise EmptyPitSetError("no PIT values")

        with pytest.raises(TrainingError):
            try:
                raise DivergenceError("nan", context={"epoch": 1, "batch": 4})
            except CalibrationError:
                pytest.fail("DivergenceError is not a calibration error")


class TestStructuredErrors:
    """Test errors with structured constructors."""

    def test_csv_parse_error(self):
        """Test line, column and reason go into the context."""
        error = CsvParseError(line=14, column="ens_sd", reason="not a number")

        assert error.message == "Malformed CSV row"
        assert error.context == {"line": 14, "column": "ens_sd", "reason": "not a number"}
        assert str(error) == "Malformed CSV row [line=14, column=ens_sd, reason=not a number]"

    def test_csv_parse_error_extra_context(self):
        """Test extra keyword context is kept."""
        error = CsvParseError("Bad row", line=3, path="train.csv")

        assert error.context == {"path": "train.csv", "line": 3}

    def test_objective_not_finite(self):
        """Test the offending point is rounded into the context."""
        error = ObjectiveNotFiniteError(iteration=12, point=[0.1234567891, 1.2])

        assert error.context == {"iteration": 12, "point": [0.123457, 1.2]}

    def test_objective_not_finite_defaults(self):
        """Test the default message without context."""
        assert str(ObjectiveNotFiniteError()) == "Objective is not finite"


class TestFactories:
    """Test factory functions."""

    def test_unknown_station(self):
        """Test the station index and table size are reported."""
        error = unknown_station(7, 5)

        assert isinstance(error, UnknownStationError)
        assert error.context == {"station": 7, "station_count": 5}
        assert "7" in error.message

    def test_degenerate_exceedance(self):
        """Test threshold and case count are reported."""
        error = degenerate_exceedance(12.5, 40)

        assert isinstance(error, DegenerateExceedanceError)
        assert str(error) == "Forecast exceedance probabilities sum to zero [threshold=12.5, cases=40]"
