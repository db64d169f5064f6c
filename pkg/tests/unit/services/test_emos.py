"""
Unit tests for EMOS

Tests tailcal/services/emos.py:
- Link function and seasonal harmonics
- Station clustering on quantile features
- OLS initialization and loss-driven fitting
- Model artifacts
"""

import numpy as np
import pandas as pd
import pytest

from tailcal.models.dataset import WeatherDataset
from tailcal.models.loss_spec import LossSpec
from tailcal.services.emos import (
    EmosModel,
    EmosParams,
    cluster_stations,
    elbow_report,
    emos_fit,
    emos_link,
    fit_cluster,
    initial_params,
)
from tailcal.services.errors import (
    ConfigError,
    InsufficientDataError,
    ObjectiveNotFiniteError,
    OptimizerAbortError,
    UnknownStationError,
)
from tailcal.services.loss import evaluate_loss
from tailcal.models.forecast import ForecastSet


TRUE_THETA = EmosParams(alpha=0.5, beta=0.9, eta=-0.2, delta=0.3, lambda_mu_s=0.4,
                        lambda_mu_c=-0.3, lambda_sigma_s=0.1, lambda_sigma_c=0.05)


def make_dataset(n, theta=TRUE_THETA, stations=("A", "B"), seed=0) -> WeatherDataset:
    rng = np.random.default_rng(seed)
    m = rng.uniform(2.0, 10.0, size=n)
    s = rng.uniform(0.3, 2.0, size=n)
    doy = rng.integers(1, 366, size=n)
    y = emos_link(theta, m, s, doy).sample(rng, 1)[:, 0]
    frame = pd.DataFrame({
        "station_id": rng.choice(list(stations), size=n),
        "date": pd.Timestamp("2021-01-01") + pd.to_timedelta(doy - 1, unit="D"),
        "doy": doy,
        "ens_mean": m,
        "ens_sd": s,
        "obs": y,
    })
    frame["date"] = frame["date"].dt.strftime("%Y-%m-%d")
    return WeatherDataset.from_frame(frame).unwrap()


def crps(data, params):
    forecast = emos_link(params, data.ens_mean, data.ens_sd, data.doy)
    return evaluate_loss(ForecastSet(forecast, data.obs), LossSpec()).total


class TestEmosLink:
    """Test the predictive link."""

    def test_identity_link(self):
        """Test theta = (0, 1, 0, ...) gives TN(m, 1, 0)."""
        d = emos_link(EmosParams(), 5.0, 1.0, 200)

        assert float(d.mu) == 5.0
        assert float(d.sigma) == 1.0
        assert float(d.lower) == 0.0

    def test_no_harmonics_no_season(self):
        """Test zero harmonic weights make the forecast independent of doy."""
        params = EmosParams(alpha=1.0, beta=0.8, eta=0.2, delta=0.1)
        a = emos_link(params, 6.0, 1.5, 10)
        b = emos_link(params, 6.0, 1.5, 190)

        assert float(a.mu) == float(b.mu)
        assert float(a.sigma) == float(b.sigma)

    def test_quarter_year_harmonic(self):
        """Test sin = 1 and cos = 0 at a quarter of the year."""
        params = EmosParams(alpha=1.0, beta=0.0, lambda_mu_s=2.0, lambda_mu_c=0.5)
        d = emos_link(params, 5.0, 1.0, 91.3125)

        assert float(d.mu) == pytest.approx(3.0, abs=1e-12)

    def test_sigma_positive(self):
        """Test extreme log-scale coefficients still give positive sigma."""
        d = emos_link(EmosParams(eta=-500.0), [1.0, 2.0], [0.5, 0.5], [1, 2])

        assert np.all(d.sigma > 0.0)

    def test_vector_round_trip(self):
        """Test the eight-entry parameter vector."""
        assert EmosParams.from_vector(TRUE_THETA.to_vector()) == TRUE_THETA
        with pytest.raises(ConfigError):
            EmosParams.from_vector(np.zeros(7))


class TestClusterStations:
    """Test semi-local station clustering."""

    @pytest.fixture
    def separable(self):
        rng = np.random.default_rng(9)
        calm = {f"c{i}": rng.normal(5.0, 1.0, size=200) for i in range(4)}
        windy = {f"w{i}": rng.normal(15.0, 1.0, size=200) for i in range(4)}
        return {**calm, **windy}

    def test_separates_groups(self, separable):
        """Test N(5, 1) and N(15, 1) stations split perfectly with k = 2."""
        clustering = cluster_stations(separable, k=2, seed=1)
        labels = dict(zip(clustering.stations, clustering.assignments))

        assert len({labels[f"c{i}"] for i in range(4)}) == 1
        assert len({labels[f"w{i}"] for i in range(4)}) == 1
        assert labels["c0"] != labels["w0"]

    def test_single_cluster(self, separable):
        """Test k = 1 assigns every station to cluster 0."""
        clustering = cluster_stations(separable, k=1)

        assert set(clustering.assignments.tolist()) == {0}

    def test_one_cluster_per_station(self, separable):
        """Test k = station count leaves no within-cluster variance."""
        clustering = cluster_stations(separable, k=len(separable))

        assert clustering.inertia == pytest.approx(0.0, abs=1e-9)
        assert len(set(clustering.assignments.tolist())) == len(separable)

    def test_deterministic(self, separable):
        """Test equal seeds give equal assignments."""
        a = cluster_stations(separable, k=3, seed=4)
        b = cluster_stations(separable, k=3, seed=4)

        np.testing.assert_array_equal(a.assignments, b.assignments)

    def test_too_few_observations(self, separable):
        """Test a short station record names the station."""
        separable["short"] = np.arange(5.0)

        with pytest.raises(InsufficientDataError) as exc_info:
            cluster_stations(separable, k=2, quantile_count=9)

        assert exc_info.value.context["station"] == "short"

    def test_too_many_clusters(self, separable):
        """Test k above the station count is a configuration error."""
        with pytest.raises(ConfigError):
            cluster_stations(separable, k=9)

    def test_elbow_report(self, separable):
        """Test the elbow table drops sharply at the true group count."""
        report = elbow_report(separable, max_k=4)

        assert list(report["k"]) == [1, 2, 3, 4]
        assert report["inertia"].iloc[1] < 0.05 * report["inertia"].iloc[0]

    def test_unknown_station_index(self, separable):
        """Test cluster lookup of an unknown index."""
        clustering = cluster_stations(separable, k=2)

        with pytest.raises(UnknownStationError):
            clustering.cluster_of(np.array([-1]))


class TestEmosFit:
    """Test parameter estimation."""

    def test_initial_params_noiseless(self):
        """Test OLS recovers an exact linear location."""
        data = make_dataset(200)
        data = WeatherDataset.from_frame(data.to_frame().assign(obs=1.0 + 2.0 * data.ens_mean)).unwrap()
        init = initial_params(data)

        assert init.alpha == pytest.approx(1.0, abs=1e-8)
        assert init.beta == pytest.approx(2.0, abs=1e-8)
        assert init.delta == 0.0
        assert init.eta == pytest.approx(np.log(1e-3))

    def test_fit_improves_on_start(self):
        """Test the fitted CRPS is no worse than at the initialization."""
        data = make_dataset(800)
        params, result = fit_cluster(data, LossSpec())

        assert crps(data, params) <= crps(data, initial_params(data))
        assert result.final_value == pytest.approx(crps(data, params), abs=1e-12)

    def test_zero_gamma_penalty_is_ignored(self):
        """Test a zero-weight MCB penalty gives the baseline fit."""
        data = make_dataset(400)
        baseline, _ = fit_cluster(data, LossSpec())
        penalized, _ = fit_cluster(data, LossSpec.create(penalty="mcb", gamma=0.0).unwrap())

        np.testing.assert_array_equal(baseline.to_vector(), penalized.to_vector())

    @pytest.mark.slow
    def test_recovers_true_parameters(self):
        """Test a well-specified fit lands near the generating parameters."""
        data = make_dataset(10_000, seed=3)
        params, _ = fit_cluster(data, LossSpec())

        np.testing.assert_allclose(params.to_vector(), TRUE_THETA.to_vector(), atol=0.05)

    def test_abort_names_cluster(self, mocker):
        """Test optimizer failures carry the cluster id."""
        mocker.patch("tailcal.services.emos.minimize", side_effect=ObjectiveNotFiniteError(iteration=3))

        with pytest.raises(OptimizerAbortError) as exc_info:
            fit_cluster(make_dataset(50), LossSpec(), cluster=2)

        assert exc_info.value.context["cluster"] == 2
        assert exc_info.value.context["iteration"] == 3


class TestEmosModel:
    """Test fitted models."""

    @pytest.fixture
    def model(self):
        data = make_dataset(600, stations=("A", "B", "C", "D"))
        clustering = cluster_stations(data.by_station(), k=2, seed=0)
        return emos_fit(data, LossSpec(), clustering, seed=5), data

    def test_one_parameter_vector_per_cluster(self, model):
        """Test every cluster receives parameters."""
        fitted, _ = model

        assert sorted(fitted.params) == [0, 1]
        assert set(fitted.fits) == {0, 1}

    def test_predict(self, model):
        """Test predictions use each row's cluster parameters."""
        fitted, data = model
        forecast = fitted.predict(data)
        clusters = fitted.clustering.cluster_of(data.station_index)
        row = int(np.flatnonzero(clusters == 1)[0])
        single = emos_link(fitted.params[1], data.ens_mean[row], data.ens_sd[row], data.doy[row])

        assert forecast.batch_shape == (len(data),)
        assert float(forecast.mu[row]) == pytest.approx(float(single.mu))

    def test_artifact_round_trip(self, model):
        """Test save/load through the artifact dictionary."""
        fitted, data = model
        restored = EmosModel.from_artifact(fitted.to_artifact())

        np.testing.assert_array_equal(restored.predict(data).mu, fitted.predict(data).mu)
        assert restored.seed == 5

    def test_unknown_station(self, model):
        """Test rows from an unclustered station."""
        fitted, data = model
        foreign = WeatherDataset.from_frame(data.to_frame().assign(station_id="Z")).unwrap()

        with pytest.raises(UnknownStationError):
            fitted.predict(foreign)
