"""Tests for SimulateStage"""

import pytest

from tailcal.orchestration.pipeline.context import RunContext
from tailcal.services.errors import ConfigError
from tailcal.services.simstudy import estimate_a, simulate
from tailcal.stages.simulation_stage import SimulateStage


CONFIG = {
    "simulation": {
        "n": 4000,
        "threshold": 3.29,
        "penalties": ["mcb", "tmcb"],
        "divergence": "w1",
        "estimator": "exact",
        "gamma_grid": [1.0, 100.0],
    },
}


def make_context(config=CONFIG, seed=7):
    return RunContext(command="simulate", config=config, seed=seed)


class TestSimulateStage:
    """Test suite for SimulateStage"""

    def test_sweep_outputs(self):
        """Test the sweep table, curves and summary document"""
        context = make_context()

        result = SimulateStage().execute(context)

        assert result.is_ok()
        table = context.tables["metrics.csv"]
        assert list(table["penalty"]) == ["mcb"] * 3 + ["tmcb"] * 3
        assert list(table["gamma"]) == [0.0, 1.0, 100.0] * 2
        assert {"pit_f1", "pit_f2", "pit_fitted", "pit_tmcb_g100"} <= set(context.curves)
        assert list(context.curves["pit_f1"].columns) == ["u", "value", "ohat"]

        summary = context.documents["summary.json"]
        assert summary["n"] == 4000
        assert summary["seed"] == 7
        assert set(summary["reference"]) == {"f1", "f2", "mixture"}

    def test_a_hat_matches_direct_fit(self):
        """Test the summary a_hat is the unpenalized fit on the same records"""
        context = make_context()

        SimulateStage().execute(context).unwrap()

        direct = estimate_a(simulate(4000, 7))
        assert context.documents["summary.json"]["a_hat"] == pytest.approx(direct, abs=1e-9)

    def test_overrides(self):
        """Test explicit size, penalties and grid replace the configured ones"""
        context = make_context()

        SimulateStage(n=500, penalties=["cls"], gammas=[2.0]).execute(context).unwrap()

        table = context.tables["metrics.csv"]
        assert context.documents["summary.json"]["n"] == 500
        assert list(table["penalty"]) == ["cls", "cls"]
        assert list(table["gamma"]) == [0.0, 2.0]

    @pytest.mark.parametrize("stage", [
        SimulateStage(n=0),
        SimulateStage(gammas=[-1.0]),
        SimulateStage(penalties=["crps"]),
    ])
    def test_invalid_settings(self, stage):
        """Test bad overrides fail with ConfigError before simulating"""
        context = make_context()

        result = stage.execute(context)

        assert result.is_err()
        assert isinstance(result.unwrap_err(), ConfigError)
        assert not context.has("records")

    def test_same_seed_same_table(self):
        """Test reruns with one seed give identical tables"""
        first, second = make_context(), make_context()

        SimulateStage(n=1000).execute(first).unwrap()
        SimulateStage(n=1000).execute(second).unwrap()

        assert first.tables["metrics.csv"].equals(second.tables["metrics.csv"])
