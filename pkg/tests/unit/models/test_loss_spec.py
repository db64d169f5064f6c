"""
Unit tests for LossSpec DTO

Tests:
- Creation and normalization
- Validation of every field
- Labels and dictionary round trip
"""

import pytest

from tailcal.models.loss_spec import LossSpec
from tailcal.services import ConfigError


class TestLossSpecCreation:
    """Test LossSpec creation and validation."""

    def test_defaults(self):
        """Test the default spec is the CRPS baseline."""
        spec = LossSpec.create().unwrap()

        assert spec.base == "crps"
        assert spec.penalty == "none"
        assert spec.gamma == 0.0
        assert spec.threshold == 12.5
        assert spec.label == "baseline"

    def test_names_are_normalized(self):
        """Test names are lower-cased."""
        spec = LossSpec.create(base="CRPS", penalty="TMCB", gamma=5).unwrap()

        assert spec.penalty == "tmcb"
        assert spec.label == "tmcb_g5"

    @pytest.mark.parametrize("kwargs", [
        {"base": "brier"},
        {"penalty": "entropy"},
        {"divergence": "kl"},
        {"estimator": "biased"},
        {"gamma": -1.0},
        {"gamma": float("inf")},
        {"threshold": float("nan")},
        {"nu": 0.0},
        {"estimator": "order", "divergence": "cramer"},
    ])
    def test_invalid_fields(self, kwargs):
        """Test invalid fields fail with ConfigError."""
        result = LossSpec.create(**kwargs)

        assert result.is_err()
        assert isinstance(result.unwrap_err(), ConfigError)

    def test_sample_calibration_needs_nu(self):
        """Test sample-backed calibration penalties require nu."""
        assert LossSpec.create(base="fair_crps", penalty="tmcb", gamma=1.0).is_err()
        assert LossSpec.create(base="fair_crps", penalty="tmcb", gamma=1.0, nu=0.05).is_ok()
        assert LossSpec.create(base="fair_crps", penalty="weighted", gamma=1.0).is_ok()

    def test_zero_gamma_label(self):
        """Test a zero weight keeps its penalty in the label; only no penalty is the baseline."""
        assert LossSpec.create(penalty="mcb", gamma=0.0).unwrap().label == "mcb_g0"
        assert LossSpec.create(penalty="none", gamma=0.0).unwrap().label == "baseline"


class TestLossSpecSerialization:
    """Test dictionary conversion."""

    def test_round_trip(self):
        """Test to_dict and from_dict agree."""
        spec = LossSpec.create(base="log_score", penalty="weighted", gamma=2.0, threshold=10.0).unwrap()

        assert LossSpec.from_dict(spec.to_dict()).unwrap() == spec

    def test_unknown_key(self):
        """Test unknown keys are rejected."""
        result = LossSpec.from_dict({"base": "crps", "lambda": 1.0})

        assert result.is_err()
        assert "lambda" in result.unwrap_err().context["keys"]

    def test_with_penalty(self):
        """Test swapping the penalty keeps the rest."""
        spec = LossSpec.create(threshold=9.0).unwrap().with_penalty("tmcb", 3.0)

        assert spec.penalty == "tmcb"
        assert spec.gamma == 3.0
        assert spec.threshold == 9.0
        assert spec.weight_spec.threshold == 9.0
