"""
Unit tests for the distributional regression network

Tests tailcal/services/drn.py:
- Forecast construction and station embeddings
- Full-parameter gradients against finite differences
- Pre-training and finetuning
- Model artifacts and network settings
"""

import numpy as np
import pandas as pd
import pytest

from tailcal.models.dataset import WeatherDataset
from tailcal.models.forecast import ForecastSet
from tailcal.models.loss_report import LossReport
from tailcal.models.loss_spec import LossSpec
from tailcal.services.dist import TruncatedNormal
from tailcal.services.drn import (
    DrnModel,
    NetConfig,
    drn_finetune,
    drn_loss_and_grad,
    drn_train,
)
from tailcal.services.errors import ConfigError, DivergenceError, SchemaError, UnknownStationError
from tailcal.services.loss import evaluate_loss
from tailcal.services.optim import numeric_gradient
from tailcal.services.scores import crps_closed_tn


def make_dataset(n, seed=0, stations=("A", "B", "C")) -> WeatherDataset:
    """y ~ TN(m, 0.5 + 0.4 s, 0)."""
    rng = np.random.default_rng(seed)
    m = rng.uniform(1.0, 12.0, size=n)
    s = rng.uniform(0.2, 2.0, size=n)
    doy = rng.integers(1, 366, size=n)
    y = TruncatedNormal(m, 0.5 + 0.4 * s).sample(rng, 1)[:, 0]
    frame = pd.DataFrame({
        "station_id": rng.choice(list(stations), size=n),
        "date": [f"2021-{1 + d % 12:02d}-01" for d in range(n)],
        "doy": doy,
        "ens_mean": m,
        "ens_sd": s,
        "obs": y,
    })
    return WeatherDataset.from_frame(frame).unwrap()


@pytest.fixture
def data():
    return make_dataset(300)


class TestDrnModel:
    """Test forecasts of a network."""

    def test_predicts_truncated_normal(self, data):
        """Test one positive-scale forecast per row."""
        forecast = DrnModel.init(data, seed=1).predict(data)

        assert forecast.batch_shape == (len(data),)
        assert np.all(forecast.sigma > 0.0)
        assert np.all(forecast.lower == 0.0)

    def test_zero_weights_give_output_bias(self, data):
        """Test a zero network returns TN(bias mu, exp(bias log sigma)) everywhere."""
        model = DrnModel.init(data)
        model = model.with_params(np.zeros_like(model.get_params()))
        model.trunk.layers[-1].b = np.array([3.0, np.log(2.0)])
        forecast = model.predict(data)

        np.testing.assert_allclose(forecast.mu, 3.0)
        np.testing.assert_allclose(forecast.sigma, 2.0)

    def test_stations_differ(self, data):
        """Test identical weather at two stations gives different forecasts."""
        model = DrnModel.init(data, seed=2)
        pair = data.subset(np.array([0, 0]))
        frame = pair.to_frame()
        frame.loc[1, "station_id"] = "C" if frame.loc[0, "station_id"] != "C" else "A"
        pair = WeatherDataset.from_frame(frame, data.stations).unwrap()
        forecast = model.predict(pair)

        assert forecast.mu[0] != forecast.mu[1]

    def test_unknown_station(self, data):
        """Test rows from a station without embedding."""
        model = DrnModel.init(data)
        foreign = WeatherDataset.from_frame(data.to_frame().assign(station_id="Z")).unwrap()

        with pytest.raises(UnknownStationError):
            model.predict(foreign)

    def test_artifact_round_trip(self, data):
        """Test the artifact reproduces predictions."""
        model = DrnModel.init(data, seed=3)
        restored = DrnModel.from_artifact(model.to_artifact({"epochs": 0}))

        np.testing.assert_array_equal(restored.predict(data).mu, model.predict(data).mu)
        assert restored.stations == model.stations

    def test_wrong_family(self, data):
        """Test loading another family's artifact."""
        artifact = DrnModel.init(data).to_artifact()
        artifact = type(artifact)(family="emos", payload=artifact.payload)

        with pytest.raises(SchemaError):
            DrnModel.from_artifact(artifact)


class TestDrnGradient:
    """Test backprop through the network into forecast parameters."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("penalty", ["none", "weighted", "tmcb"])
    def test_matches_finite_differences(self, seed, penalty):
        """Test every weight and embedding gradient."""
        data = make_dataset(40, seed=seed)
        threshold = float(np.quantile(data.obs, 0.8))
        spec = LossSpec.create(penalty=penalty, gamma=2.0, threshold=threshold).unwrap()
        model = DrnModel.init(data, hidden=(5, 5), seed=seed)

        def objective(flat):
            return evaluate_loss(model.with_params(flat).forecast_set(data), spec).total

        _, analytic = drn_loss_and_grad(model, data, spec)
        numeric = numeric_gradient(objective, model.get_params(), 1e-6)

        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)


class TestDrnTraining:
    """Test pre-training and finetuning."""

    def test_training_reduces_crps(self, data):
        """Test the training CRPS decreases."""
        _, history = drn_train(data, NetConfig(epochs=5, batch_size=64), seed=0)

        assert list(history.columns) == ["epoch", "crps"]
        assert history["crps"].iloc[-1] < history["crps"].iloc[0]

    def test_same_seed_same_weights(self, data):
        """Test seeded training is reproducible."""
        cfg = NetConfig(epochs=2, batch_size=64)
        a, _ = drn_train(data, cfg, seed=7)
        b, _ = drn_train(data, cfg, seed=7)

        np.testing.assert_array_equal(a.get_params(), b.get_params())

    def test_divergence(self, data, mocker):
        """Test a NaN loss aborts with its epoch and batch."""
        params = DrnModel.init(data).get_params()
        mocker.patch(
            "tailcal.services.drn.drn_loss_and_grad",
            return_value=(LossReport(np.nan, np.nan, 0.0), np.zeros_like(params)),
        )

        with pytest.raises(DivergenceError) as exc_info:
            drn_train(data, NetConfig(epochs=1, batch_size=64))

        assert exc_info.value.context["epoch"] == 1
        assert exc_info.value.context["batch"] == 0

    def test_zero_gamma_finetune_stays_near_optimum(self, data):
        """Test gamma = 0 runs the base score alone and barely moves a trained model."""
        model, _ = drn_train(data, NetConfig(epochs=20, batch_size=64), seed=0)
        threshold = float(np.quantile(data.obs, 0.9))
        spec = LossSpec.create(penalty="tmcb", gamma=0.0, threshold=threshold).unwrap()
        tuned, history = drn_finetune(model, data, spec, steps=20, learning_rate=1e-3)

        assert len(history) == 21
        np.testing.assert_allclose(history["total"], history["base"])
        assert history["total"].iloc[-1] <= history["total"].iloc[0] + 1e-3
        assert np.max(np.abs(tuned.get_params() - model.get_params())) <= 20 * 1e-3 * 1.5

    def test_finetune_needs_penalty(self, data):
        """Test an objective without a penalty is rejected."""
        with pytest.raises(ConfigError):
            drn_finetune(DrnModel.init(data), data, LossSpec(), steps=1)

    def test_finetune_leaves_input_model_alone(self, data):
        """Test the caller's model keeps its loss spec and weights, even with no steps."""
        model = DrnModel.init(data, seed=4)
        before = model.get_params().copy()
        spec = LossSpec.create(penalty="mcb", gamma=2.0).unwrap()

        tuned, history = drn_finetune(model, data, spec, steps=0)

        assert tuned is not model
        assert tuned.loss_spec == spec
        assert model.loss_spec == LossSpec()
        assert len(history) == 1
        np.testing.assert_array_equal(model.get_params(), before)

    def test_finetune_lowers_objective(self, data):
        """Test full-batch steps reduce the penalized training objective."""
        model, _ = drn_train(data, NetConfig(epochs=3, batch_size=64), seed=0)
        threshold = float(np.quantile(data.obs, 0.9))
        spec = LossSpec.create(penalty="tmcb", gamma=5.0, threshold=threshold).unwrap()
        tuned, history = drn_finetune(model, data, spec, steps=30, learning_rate=1e-3)

        assert len(history) == 31
        assert history["total"].iloc[-1] < history["total"].iloc[0]
        assert tuned.loss_spec == spec

    @pytest.mark.slow
    def test_close_to_ideal_forecaster(self):
        """Test a trained network scores within 5% of the generating distribution."""
        train, test = make_dataset(4000, seed=11), make_dataset(2000, seed=12)
        model, _ = drn_train(train, NetConfig(epochs=60, batch_size=256), seed=0)
        ideal = TruncatedNormal(test.ens_mean, 0.5 + 0.4 * test.ens_sd)

        model_crps = evaluate_loss(model.forecast_set(test), LossSpec()).total
        ideal_crps = float(np.mean(crps_closed_tn(ideal, test.obs)))

        assert model_crps <= 1.05 * ideal_crps


class TestNetConfig:
    """Test network settings."""

    def test_from_config_section(self):
        """Test values are read from a family section."""
        cfg = NetConfig.from_dict({"hidden": [8, 4], "epochs": 3, "batch_size": 32}).unwrap()

        assert cfg.hidden == (8, 4)
        assert cfg.epochs == 3
        assert cfg.finetune_steps == 50

    @pytest.mark.parametrize("section", [{"epochs": 0}, {"hidden": []}, {"learning_rate": 0.0}])
    def test_invalid(self, section):
        """Test invalid settings are rejected."""
        assert NetConfig.from_dict(section).is_err()
