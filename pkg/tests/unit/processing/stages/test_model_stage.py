"""Tests for ClusterStage, ReplicateStage, EvaluateStage and DiagnoseStage"""

import numpy as np
import pytest

from tailcal.orchestration.pipeline.context import RunContext
from tailcal.services.errors import ConfigError, DataError
from tailcal.services.replicates import BASELINE
from tailcal.stages.data_stage import LoadDataStage
from tailcal.stages.model_stage import ClusterStage, DiagnoseStage, EvaluateStage, ReplicateStage
from tailcal.stages.output_stage import WriteOutputsStage


CONFIG = {
    "system": {"parallelization": {"max_workers": 1}},
    "data": {"threshold": 8.0, "synth": {"station_count": 3, "days": 60}},
    "scoring": {"u_grid_points": 11, "histogram_bins": 5},
    "loss": {"base": "crps", "divergence": "w1", "estimator": "exact", "nu": None},
    "optim": {"kind": "bfgs-numeric", "max_iters": 200},
    "emos": {"clusters": 2, "quantile_features": 5, "elbow_max_k": 3, "gamma_grid": [1],
             "penalties": ["tmcb"], "replicates": 1},
    "drn": {"hidden": [4], "epochs": 1, "batch_size": 64, "finetune_steps": 2,
            "gamma_grid": [1.0], "penalties": ["tmcb"], "replicates": 1},
}


def loaded_context(command="train", out_dir=None, **options):
    """Context after LoadDataStage on the seeded synthetic data"""
    context = RunContext(command=command, config=CONFIG, seed=2, out_dir=out_dir, options=options)
    LoadDataStage().execute(context).unwrap()
    return context


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """EMOS baselines written to a run directory"""
    out_dir = tmp_path_factory.mktemp("emos_run")
    context = loaded_context(out_dir=out_dir, model="emos")
    ReplicateStage().execute(context).unwrap()
    WriteOutputsStage().execute(context).unwrap()
    return out_dir


class TestClusterStage:
    """Test suite for ClusterStage"""

    def test_clusters_and_elbow(self):
        """Test assignments for every station and one elbow row per k"""
        context = loaded_context(command="cluster")

        result = ClusterStage().execute(context)

        assert result.is_ok()
        clusters = context.documents["clusters.json"]
        assert clusters["k"] == 2
        assert len(clusters["assignments"]) == 3
        assert list(context.tables["elbow.csv"]["k"]) == [1, 2, 3]


class TestReplicateStage:
    """Test suite for ReplicateStage"""

    def test_train(self):
        """Test baseline training only: one record, one artifact, zero self-skill"""
        context = loaded_context(model="emos")

        result = ReplicateStage().execute(context)

        assert result.is_ok()
        assert list(context.tables["metrics.csv"]["label"]) == [BASELINE]
        assert list(context.models) == ["emos_baseline_r00"]
        assert context.tables["skill.csv"]["crps_skill"].iloc[0] == 0.0
        assert "sign_tests.csv" not in context.tables

    def test_finetune(self):
        """Test penalized objectives add records, scatter and sign tests"""
        context = loaded_context(model="emos")

        result = ReplicateStage(finetune=True, penalties=["tmcb"], gammas=[0.0, 1.0]).execute(context)

        assert result.is_ok()
        assert list(context.tables["metrics.csv"]["label"]) == [BASELINE, "tmcb_g1"]
        assert len(context.tables["sign_tests.csv"]) == 5
        assert "scatter.csv" in context.tables
        assert "emos_tmcb_g1_r00" in context.models

    def test_trajectory(self):
        """Test sweeps emit the gamma trajectory from the baseline"""
        context = loaded_context(model="emos")

        ReplicateStage(finetune=True, trajectory=True).execute(context).unwrap()

        path = context.tables["trajectory.csv"]
        assert list(path["gamma"]) == [0.0, 1.0]

    def test_saved_baselines(self, trained_run, mocker):
        """Test --baseline finetunes saved models without retraining"""
        trainer = mocker.patch("tailcal.services.replicates.train_baseline")
        context = loaded_context(command="finetune", model="emos", baseline=str(trained_run))

        result = ReplicateStage(finetune=True).execute(context)

        assert result.is_ok()
        trainer.assert_not_called()
        assert list(context.tables["metrics.csv"]["label"]) == [BASELINE, "tmcb_g1"]

    def test_missing_baselines(self, tmp_path):
        """Test a directory without baseline models fails"""
        context = loaded_context(command="finetune", model="emos", baseline=str(tmp_path))

        result = ReplicateStage(finetune=True).execute(context)

        assert result.is_err()
        assert isinstance(result.unwrap_err(), DataError)

    def test_unknown_family(self):
        """Test an unknown family fails with ConfigError"""
        context = loaded_context(model="gbm")

        result = ReplicateStage().execute(context)

        assert isinstance(result.unwrap_err(), ConfigError)


class TestEvaluateStage:
    """Test suite for EvaluateStage"""

    def test_model_against_itself(self, trained_run):
        """Test a model evaluated against itself has zero skill everywhere"""
        model = str(trained_run / "models" / "emos_baseline_r00.json")
        context = loaded_context(command="evaluate", models=[model], baseline=model)

        result = EvaluateStage().execute(context)

        assert result.is_ok()
        skill = context.tables["skill.csv"]
        assert list(skill["label"]) == ["emos_baseline_r00"]
        for column in ("crps_skill", "twcrps_skill", "mcb_skill"):
            assert skill[column].iloc[0] == 0.0
        assert len(context.tables["metrics.csv"]) == 1

    def test_truth_and_run_directory(self, trained_run):
        """Test the ideal forecaster and every model of a run directory are scored"""
        context = loaded_context(command="evaluate", models=["truth", str(trained_run)])

        EvaluateStage().execute(context).unwrap()

        metrics = context.tables["metrics.csv"]
        assert list(metrics["label"]) == ["truth", "emos_baseline_r00"]
        assert np.all(metrics["crps"] > 0.0)
        assert "skill.csv" not in context.tables

    def test_requires_model(self):
        """Test evaluate without forecasters is a configuration error"""
        context = loaded_context(command="evaluate")

        result = EvaluateStage().execute(context)

        assert isinstance(result.unwrap_err(), ConfigError)

    def test_missing_model_file(self, tmp_path):
        """Test a nonexistent model path fails with DataError"""
        context = loaded_context(command="evaluate", models=[str(tmp_path / "nope.json")])

        result = EvaluateStage().execute(context)

        assert isinstance(result.unwrap_err(), DataError)


class TestDiagnoseStage:
    """Test suite for DiagnoseStage"""

    def test_truth_curves(self):
        """Test PIT, CPIT and R-hat curves plus histograms of the ideal forecaster"""
        context = loaded_context(command="diagnose", models=["truth"])

        result = DiagnoseStage().execute(context)

        assert result.is_ok()
        assert {"truth_pit", "truth_cpit", "truth_rhat"} <= set(context.curves)
        pit = context.curves["truth_pit"]
        assert list(pit.columns) == ["u", "value", "ohat"]
        assert len(pit) == 11
        assert context.tables["histograms/truth_pit.csv"]["count"].sum() == len(context.require("test"))
        assert len(context.tables["histograms/truth_cpit.csv"]) == 5

    def test_truth_needs_synthetic_data(self):
        """Test 'truth' fails for data without a truth table"""
        context = loaded_context(command="diagnose", models=["truth"])
        context.set("truth_test", None)

        result = DiagnoseStage().execute(context)

        assert isinstance(result.unwrap_err(), DataError)
