"""
Unit tests for composite objectives

Tests tailcal/services/loss.py:
- evaluate_loss for every base/penalty combination
- Affine structure in gamma
- Analytic gradients against finite differences
- Incompatible and non-differentiable configurations
"""

import numpy as np
import pytest

from tailcal.models.forecast import ForecastSet
from tailcal.models.loss_spec import LossSpec
from tailcal.services.dist import EnsembleForecast, Normal, TruncatedNormal
from tailcal.services.errors import (
    DegenerateExceedanceError,
    IncompatibleForecastError,
    LossError,
    NonDifferentiableConfigurationError,
)
from tailcal.services.loss import (
    TruncatedNormalAdapter,
    evaluate_loss,
    evaluate_loss_with_grad,
    loss_gradient,
    weighted_as_twcrps,
)
from tailcal.services.optim import numeric_gradient
from tailcal.services.scores import censored_likelihood_score


THRESHOLD = 4.0


def spec(**kwargs) -> LossSpec:
    kwargs.setdefault("threshold", THRESHOLD)
    return LossSpec.create(**kwargs).unwrap()


@pytest.fixture
def tn_params():
    """(mu, log sigma) of 30 truncated-normal forecasts plus observations."""
    rng = np.random.default_rng(21)
    n = 30
    mu = rng.uniform(1.0, 5.0, size=n)
    log_sigma = rng.uniform(-0.5, 0.5, size=n)
    y = TruncatedNormal(mu, np.exp(log_sigma)).sample(rng, 1)[:, 0]
    y[0] = 6.5
    y[1] = 5.2
    return np.concatenate([mu, log_sigma]), y


def tn_cases(params, y) -> ForecastSet:
    return ForecastSet.create(TruncatedNormalAdapter(params).forecast(), y).unwrap()


class EnsembleAdapter:
    """Raw member matrix as parameters."""

    def __init__(self, members):
        self.members = np.asarray(members, dtype=float)
        self.ensemble = EnsembleForecast(self.members)

    def pullback(self, grad):
        return self.ensemble.unsort(grad.members).ravel()


class TestEvaluateLoss:
    """Test objective values."""

    def test_gamma_zero_is_baseline(self, tn_params):
        """Test total equals the base mean for gamma = 0."""
        params, y = tn_params
        report = evaluate_loss(tn_cases(params, y), spec(penalty="tmcb", gamma=0.0))

        assert report.total == report.base_mean

    def test_weighted_below_support(self, tn_params):
        """Test t below every forecast's support gives (1 + gamma) * CRPS."""
        params, y = tn_params
        report = evaluate_loss(tn_cases(params, y), spec(penalty="weighted", gamma=3.0, threshold=-1.0))

        assert report.total == pytest.approx(4.0 * report.base_mean, rel=1e-12)

    def test_uniform_pit_grid_has_no_mcb(self):
        """Test PITs {1/4, 2/4, 3/4, 1} give zero order-statistic MCB."""
        members = np.tile([1.0, 2.0, 3.0], (4, 1))
        cases = ForecastSet.create(EnsembleForecast(members), [0.5, 1.5, 2.5, 3.5]).unwrap()
        report = evaluate_loss(cases, spec(penalty="mcb", gamma=1.0, estimator="order"))

        assert report.penalty_value == pytest.approx(0.0, abs=1e-15)

    def test_affine_in_gamma(self, tn_params):
        """Test penalty_value is constant and total affine in gamma."""
        params, y = tn_params
        cases = tn_cases(params, y)
        reports = [evaluate_loss(cases, spec(penalty="tmcb", gamma=g)) for g in (0.0, 1.0, 5.0)]

        assert reports[0].penalty_value == reports[1].penalty_value == reports[2].penalty_value
        for r in reports:
            assert r.total == pytest.approx(r.base_mean + r.gamma * r.penalty_value, abs=1e-12)

    def test_log_score_weighted_is_censored_likelihood(self, tn_params):
        """Test the weighted penalty of the log score is the censored likelihood."""
        params, y = tn_params
        cases = tn_cases(params, y)
        report = evaluate_loss(cases, spec(base="log_score", penalty="weighted", gamma=1.0))
        expected = np.mean(censored_likelihood_score(cases.forecast, y, THRESHOLD))

        assert report.penalty_value == pytest.approx(expected, rel=1e-12)

    def test_penalties_ignore_case_order(self, tn_params):
        """Test permuting cases leaves the objective unchanged."""
        params, y = tn_params
        cases = tn_cases(params, y)
        perm = np.random.default_rng(0).permutation(len(cases))
        s = spec(penalty="cpit_mcb", gamma=2.0)

        assert evaluate_loss(cases.subset(perm), s).total == pytest.approx(evaluate_loss(cases, s).total, abs=1e-12)

    def test_non_truncated_forecasts_use_quadrature(self):
        """Test CRPS of other continuous families is integrated numerically."""
        cases = ForecastSet.create(Normal([0.0, 1.0], 1.0), [0.0, 1.0]).unwrap()
        report = evaluate_loss(cases, spec())
        expected = 2.0 / np.sqrt(2.0 * np.pi) - 1.0 / np.sqrt(np.pi)

        assert report.base_mean == pytest.approx(expected, abs=1e-6)

    def test_sample_base_needs_ensemble(self, tn_params):
        """Test sample-based scores reject parametric forecasts."""
        params, y = tn_params
        with pytest.raises(IncompatibleForecastError):
            evaluate_loss(tn_cases(params, y), spec(base="fair_crps"))

    def test_log_score_needs_density(self):
        """Test the log score rejects ensembles."""
        cases = ForecastSet.create(EnsembleForecast([[1.0, 2.0]]), [1.5]).unwrap()
        with pytest.raises(IncompatibleForecastError):
            evaluate_loss(cases, spec(base="log_score"))

    def test_degenerate_tail_penalty(self):
        """Test zero exceedance probability propagates."""
        cases = ForecastSet.create(EnsembleForecast([[1.0, 2.0], [1.5, 2.5]]), [1.0, 2.0]).unwrap()
        with pytest.raises(DegenerateExceedanceError):
            evaluate_loss(cases, spec(penalty="tmcb", gamma=1.0))

    def test_penalty_cases(self):
        """Test the penalty can be evaluated on a separate larger ensemble."""
        rng = np.random.default_rng(2)
        y = rng.uniform(2.0, 6.0, size=10)
        small = ForecastSet.create(EnsembleForecast(rng.normal(4.0, 1.0, size=(10, 5))), y).unwrap()
        large = ForecastSet.create(EnsembleForecast(rng.normal(4.0, 1.0, size=(10, 50))), y).unwrap()
        s = spec(base="fair_crps", penalty="tmcb", gamma=1.0, nu=0.1)

        with_large = evaluate_loss(small, s, penalty_cases=large)
        direct = evaluate_loss(large, s)

        assert with_large.penalty_value == pytest.approx(direct.penalty_value, rel=1e-12)


class TestLossGradient:
    """Test analytic gradients against central differences."""

    @pytest.mark.parametrize("base", ["crps", "log_score"])
    @pytest.mark.parametrize("penalty", ["none", "weighted", "mcb", "tmcb", "cpit_mcb"])
    def test_truncated_normal_gradient(self, tn_params, base, penalty):
        """Test (mu, log sigma) gradients for every penalty."""
        params, y = tn_params
        s = spec(base=base, penalty=penalty, gamma=2.0)

        def objective(p):
            return evaluate_loss(tn_cases(p, y), s).total

        analytic = loss_gradient(tn_cases(params, y), s, TruncatedNormalAdapter(params))
        numeric = numeric_gradient(objective, params, 1e-6)

        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)

    def test_gamma_zero_gradient_is_base_gradient(self, tn_params):
        """Test a zero weight leaves only the base gradient."""
        params, y = tn_params
        adapter = TruncatedNormalAdapter(params)
        cases = tn_cases(params, y)

        penalized = loss_gradient(cases, spec(penalty="tmcb", gamma=0.0), adapter)
        baseline = loss_gradient(cases, spec(), adapter)

        np.testing.assert_allclose(penalized, baseline, atol=1e-15)

    @pytest.mark.parametrize("penalty", ["mcb", "tmcb", "cpit_mcb"])
    def test_smoothed_ensemble_gradient(self, penalty):
        """Test member gradients of fair CRPS plus a smoothed penalty."""
        rng = np.random.default_rng(8)
        members = rng.normal(4.0, 1.2, size=(15, 6))
        y = rng.uniform(2.0, 6.5, size=15)
        y[0] = 6.0
        s = spec(base="fair_crps", penalty=penalty, gamma=1.5, nu=0.2)

        def objective(flat):
            cases = ForecastSet.create(EnsembleForecast(flat.reshape(members.shape)), y).unwrap()
            return evaluate_loss(cases, s).total

        adapter = EnsembleAdapter(members)
        cases = ForecastSet.create(adapter.ensemble, y).unwrap()
        analytic = loss_gradient(cases, s, adapter)
        numeric = numeric_gradient(objective, members.ravel(), 1e-7)

        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)

    def test_penalty_member_gradients_are_separate(self):
        """Test a separate penalty ensemble receives its own gradient."""
        rng = np.random.default_rng(3)
        y = rng.uniform(2.0, 6.0, size=8)
        small = ForecastSet.create(EnsembleForecast(rng.normal(4.0, 1.0, size=(8, 4))), y).unwrap()
        large = ForecastSet.create(EnsembleForecast(rng.normal(4.0, 1.0, size=(8, 12))), y).unwrap()
        _, grad = evaluate_loss_with_grad(small, spec(base="fair_crps", penalty="tmcb", gamma=1.0, nu=0.1), large)

        assert grad.members.shape == (8, 4)
        assert grad.penalty_members.shape == (8, 12)

    def test_hard_ensemble_penalty_is_not_differentiable(self):
        """Test hard PIT penalties on ensembles need nu."""
        cases = ForecastSet.create(EnsembleForecast([[1.0, 5.0], [2.0, 6.0]]), [4.5, 5.5]).unwrap()
        with pytest.raises(NonDifferentiableConfigurationError):
            evaluate_loss_with_grad(cases, spec(penalty="tmcb", gamma=1.0))

    def test_other_families_are_not_differentiable(self):
        """Test parametric families without analytic gradients."""
        cases = ForecastSet.create(Normal([1.0], 1.0), [0.5]).unwrap()
        with pytest.raises(NonDifferentiableConfigurationError):
            evaluate_loss_with_grad(cases, spec())


class TestCombinedWeight:
    """Test the weighted objective written as one threshold-weighted score."""

    def test_truncated_normal(self, tn_params):
        """Test CRPS + gamma * twCRPS equals twCRPS with weight 1 + gamma * 1{z > t}."""
        params, y = tn_params
        cases = tn_cases(params, y)
        s = spec(penalty="weighted", gamma=2.5)

        assert weighted_as_twcrps(cases, s) == pytest.approx(evaluate_loss(cases, s).total, rel=1e-10)

    @pytest.mark.parametrize("base", ["crps_sample", "fair_crps"])
    def test_ensemble(self, base):
        """Test the identity for ensembles through the chaining function."""
        rng = np.random.default_rng(8)
        cases = ForecastSet.create(
            EnsembleForecast(rng.normal(4.0, 1.5, size=(25, 12))), rng.uniform(1.0, 7.0, size=25)
        ).unwrap()
        s = spec(base=base, penalty="weighted", gamma=4.0)

        assert weighted_as_twcrps(cases, s) == pytest.approx(evaluate_loss(cases, s).total, rel=1e-10)

    def test_log_score_rejected(self, tn_params):
        """Test the log score has no single-weight form."""
        params, y = tn_params
        with pytest.raises(LossError):
            weighted_as_twcrps(tn_cases(params, y), spec(base="log_score", penalty="weighted", gamma=1.0))
