"""
Integration tests for the tailcal command line

Runs whole commands through main() against the repository configuration,
shrunk with a JSON overlay so each finishes in seconds.
"""

import json

import pandas as pd
import pytest

from tailcal.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main


pytestmark = pytest.mark.integration

SMALL = {
    "data": {"threshold": 8.0, "synth": {"station_count": 3, "days": 60}},
    "scoring": {"u_grid_points": 21, "histogram_bins": 10},
    "emos": {"clusters": 2, "quantile_features": 5, "elbow_max_k": 3, "gamma_grid": [1],
             "penalties": ["tmcb"], "replicates": 1},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL), encoding="utf-8")
    return path


@pytest.fixture
def generated(tmp_path, small_config):
    """gen-data output directory"""
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(small_config), "--seed", "2", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def trained(tmp_path, small_config, generated):
    """EMOS baseline run directory"""
    out = tmp_path / "emos"
    code = main(["train", "--model", "emos", "--data", str(generated), "--config", str(small_config),
                 "--seed", "2", "--out", str(out)])
    assert code == EXIT_OK
    return out


def simulate(out, *extra):
    return main(["simulate", "--n", "2000", "--seed", "7", "--penalty", "mcb,tmcb", "--gamma-grid", "1,100",
                 "--out", str(out), *extra])


class TestSimulateCommand:
    """Test the simulate command"""

    def test_outputs(self, tmp_path):
        """Test the run directory layout and summary"""
        assert simulate(tmp_path / "sim") == EXIT_OK

        run = tmp_path / "sim"
        summary = json.loads((run / "summary.json").read_text())
        assert 0.0 <= summary["a_hat"] <= 1.0
        assert summary["n"] == 2000
        assert (run / "config.json").exists()
        assert (run / "curves" / "pit_f1.csv").exists()

        table = pd.read_csv(run / "metrics.csv")
        assert len(table) == 6

        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 7

    def test_rerun_is_byte_identical(self, tmp_path):
        """Test the same flags twice write identical primary outputs"""
        assert simulate(tmp_path / "one") == EXIT_OK
        assert simulate(tmp_path / "two") == EXIT_OK

        for name in ("metrics.csv", "summary.json", "config.json", "manifest.json", "curves/rhat_fitted.csv"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes(), name

    def test_zero_records_is_usage_error(self, tmp_path, capsys):
        """Test --n 0 exits 2 with a message on standard error"""
        code = main(["simulate", "--n", "0", "--out", str(tmp_path / "sim")])

        assert code == EXIT_USAGE
        assert "--n" in capsys.readouterr().err
        assert not (tmp_path / "sim").exists()

    def test_unknown_penalty_is_usage_error(self, tmp_path):
        """Test an unknown penalty is a configuration error"""
        assert simulate(tmp_path / "sim", "--penalty", "crps") == EXIT_USAGE

    def test_bad_flag_value(self, tmp_path):
        """Test argparse errors also exit 2"""
        assert main(["simulate", "--gamma-grid", "a,b", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        """Test a missing JSON overlay exits 2"""
        assert simulate(tmp_path / "sim", "--config", str(tmp_path / "none.json")) == EXIT_USAGE


class TestModelCommands:
    """Test gen-data, train, evaluate, diagnose, cluster and finetune"""

    def test_gen_data_layout(self, generated):
        """Test train/test CSVs come with truth tables"""
        for name in ("train.csv", "test.csv", "train_truth.csv", "test_truth.csv", "data_quality.json"):
            assert (generated / name).exists(), name

    def test_train_writes_models(self, trained):
        """Test a baseline artifact and the metric table"""
        assert (trained / "models" / "emos_baseline_r00.json").exists()
        metrics = pd.read_csv(trained / "metrics.csv")
        assert list(metrics["label"]) == ["baseline"]

    def test_evaluate_against_itself(self, tmp_path, small_config, generated, trained):
        """Test a model evaluated against itself as baseline has zero skill"""
        model = str(trained / "models" / "emos_baseline_r00.json")
        out = tmp_path / "eval"

        code = main(["evaluate", "--data", str(generated), "--model", model, "--baseline", model,
                     "--config", str(small_config), "--seed", "2", "--out", str(out)])

        assert code == EXIT_OK
        skill = pd.read_csv(out / "skill.csv")
        for column in ("crps_skill", "twcrps_skill", "mcb_skill"):
            assert skill[column].iloc[0] == 0.0

    def test_diagnose_truth(self, tmp_path, small_config, generated):
        """Test the ideal forecaster's curves are written"""
        out = tmp_path / "diag"

        code = main(["diagnose", "--data", str(generated), "--model", "truth", "--config", str(small_config),
                     "--out", str(out)])

        assert code == EXIT_OK
        for name in ("truth_pit", "truth_cpit", "truth_rhat"):
            assert (out / "curves" / f"{name}.csv").exists(), name
        assert len(pd.read_csv(out / "curves" / "truth_pit.csv")) == 21

    def test_cluster(self, tmp_path, small_config, generated):
        """Test station clusters and the elbow report"""
        out = tmp_path / "clusters"

        code = main(["cluster", "--data", str(generated), "--config", str(small_config), "--out", str(out)])

        assert code == EXIT_OK
        clusters = json.loads((out / "clusters.json").read_text())
        assert clusters["k"] == 2

    def test_finetune_saved_baseline(self, tmp_path, small_config, generated, trained):
        """Test finetuning the saved baseline adds the penalized objective"""
        out = tmp_path / "tuned"

        code = main(["finetune", "--model", "emos", "--data", str(generated), "--baseline", str(trained),
                     "--penalty", "tmcb", "--gamma", "1", "--config", str(small_config), "--seed", "2",
                     "--out", str(out)])

        assert code == EXIT_OK
        assert list(pd.read_csv(out / "metrics.csv")["label"]) == ["baseline", "tmcb_g1"]
        assert (out / "models" / "emos_tmcb_g1_r00.json").exists()

    def test_missing_baseline_is_runtime_error(self, tmp_path, small_config, generated, capsys):
        """Test a run directory without models exits 1"""
        code = main(["finetune", "--model", "emos", "--data", str(generated), "--baseline", str(tmp_path),
                     "--config", str(small_config), "--out", str(tmp_path / "tuned")])

        assert code == EXIT_FAILURE
        assert "baseline" in capsys.readouterr().err.lower()
