"""
Unit tests for ConfigLoader

Tests the hierarchical configuration loading system with:
- Base configuration loading
- Family and environment overlays
- JSON overlays from the command line
- Deep merging logic
- Environment variable substitution and TAILCAL_ overrides
- Validation
"""

import json

import pytest
import yaml

from tailcal.infrastructure.config.loader import (
    ConfigLoader,
    apply_env_overrides,
    deep_merge,
    validate_config,
)
from tailcal.services.errors import ConfigError


@pytest.fixture
def loader():
    return ConfigLoader()


@pytest.fixture
def base_config(loader):
    return loader.load_config(environ={})


class TestConfigLoaderBasics:
    """Test basic ConfigLoader functionality."""

    def test_loader_initialization(self, loader):
        """Test ConfigLoader finds the repository config directory."""
        assert loader.config_dir.exists()
        assert (loader.config_dir / "base.yaml").exists()

    def test_missing_config_dir(self, tmp_path):
        """Test a nonexistent config directory raises ConfigError."""
        with pytest.raises(ConfigError, match="Config directory not found"):
            ConfigLoader(config_dir=tmp_path / "absent")

    def test_base_sections(self, base_config):
        """Test every required section is present."""
        for section in ("system", "data", "scoring", "loss", "optim", "emos", "drn", "cgm",
                        "simulation", "logging"):
            assert section in base_config

    def test_base_defaults(self, base_config):
        """Test documented defaults."""
        assert base_config["system"]["seed"] == 20240611
        assert base_config["simulation"]["threshold"] == 3.29
        assert base_config["simulation"]["gamma_grid"] == {"min": 1.0e-2, "max": 1.0e4, "points": 25}
        assert base_config["emos"]["quantile_features"] == 9
        assert base_config["emos"]["clusters"] == 4
        assert base_config["scoring"]["u_grid_points"] == 101

    def test_available_overlays(self, loader):
        """Test family and environment overlays are discovered."""
        assert loader.get_families() == ["cgm", "drn", "emos"]
        assert loader.get_environments() == ["desk", "full"]


class TestOverlays:
    """Test overlay merging."""

    def test_family_overlay(self, loader):
        """Test the CGM overlay switches to the fair CRPS and Adam."""
        config = loader.load_config(family="cgm", environ={})

        assert config["family"] == "cgm"
        assert config["loss"]["base"] == "fair_crps"
        assert config["optim"]["kind"] == "adam"
        assert config["optim"]["max_iters"] == 5000

    def test_environment_overlay(self, loader):
        """Test the full overlay scales replicates and ensembles."""
        config = loader.load_config(family="drn", env="full", environ={})

        assert config["drn"]["replicates"] == 100
        assert config["cgm"]["members"] == 250
        assert config["system"]["parallelization"]["max_workers"] == 8
        assert config["drn"]["hidden"] == [16, 16]

    def test_unknown_family(self, loader):
        """Test an unknown family overlay raises ConfigError."""
        with pytest.raises(ConfigError, match="Family config not found"):
            loader.load_config(family="gbm", environ={})

    def test_unknown_environment(self, loader):
        """Test an unknown environment overlay raises ConfigError."""
        with pytest.raises(ConfigError, match="Environment config not found"):
            loader.load_config(env="cluster", environ={})

    def test_json_overlay(self, loader, tmp_path):
        """Test a JSON document merges over the YAML layers."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"emos": {"clusters": 2}, "system": {"seed": 7}}))

        config = loader.load_config(json_path=path, environ={})

        assert config["emos"]["clusters"] == 2
        assert config["emos"]["quantile_features"] == 9
        assert config["system"]["seed"] == 7

    def test_json_overlay_missing(self, loader, tmp_path):
        """Test a missing JSON overlay raises ConfigError."""
        with pytest.raises(ConfigError, match="JSON config not found"):
            loader.load_config(json_path=tmp_path / "none.json", environ={})

    def test_json_overlay_must_be_object(self, loader, tmp_path):
        """Test a JSON list is rejected."""
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")

        with pytest.raises(ConfigError, match="must hold an object"):
            loader.load_config(json_path=path, environ={})


class TestDeepMerge:
    """Test deep_merge."""

    def test_nested_dicts_merge(self):
        """Test nested keys merge recursively."""
        merged = deep_merge({"a": {"x": 1, "y": 2}}, {"a": {"y": 3}})

        assert merged == {"a": {"x": 1, "y": 3}}

    def test_lists_replace(self):
        """Test lists are replaced, not concatenated."""
        merged = deep_merge({"grid": [1, 2, 3]}, {"grid": [5]})

        assert merged == {"grid": [5]}

    def test_inputs_untouched(self):
        """Test neither input is mutated."""
        base, override = {"a": {"x": 1}}, {"a": {"x": 2}}
        deep_merge(base, override)

        assert base == {"a": {"x": 1}}
        assert override == {"a": {"x": 2}}


class TestEnvironment:
    """Test ${VAR} substitution and TAILCAL_ overrides."""

    def test_env_overrides_typed(self, base_config):
        """Test override values are parsed as YAML."""
        config = apply_env_overrides(base_config, {
            "TAILCAL_DRN__EPOCHS": "3",
            "TAILCAL_DATA__SYNTH__TAIL_MISSPECIFIED": "false",
            "TAILCAL_SEED": "11",
            "OTHER_VAR": "ignored",
        })

        assert config["drn"]["epochs"] == 3
        assert config["data"]["synth"]["tail_misspecified"] is False
        assert config["system"]["seed"] == 11

    def test_prefix_without_path_is_ignored(self, base_config):
        """Test TAILCAL_ names without a section path are skipped."""
        assert apply_env_overrides(base_config, {"TAILCAL_HOME": "/tmp"}) == base_config

    def test_overrides_in_load(self, loader):
        """Test load_config applies overrides from the given environment."""
        config = loader.load_config(environ={"TAILCAL_SIMULATION__N": "500"})

        assert config["simulation"]["n"] == 500

    def test_invalid_override_is_validated(self, loader):
        """Test overrides pass through validation."""
        with pytest.raises(ConfigError, match="system.seed"):
            loader.load_config(environ={"TAILCAL_SEED": "-1"})

    def test_variable_substitution(self, tmp_path, monkeypatch, base_config):
        """Test ${VAR} strings are filled from the environment."""
        (tmp_path / "base.yaml").write_text(yaml.safe_dump({**base_config, "logging": {"level": "${LOG_LEVEL}"}}))
        monkeypatch.setenv("LOG_LEVEL", "DEBUG")

        config = ConfigLoader(config_dir=tmp_path).load_config(environ={})

        assert config["logging"]["level"] == "DEBUG"

    def test_unset_variable(self, tmp_path, monkeypatch, base_config):
        """Test unset variables raise ConfigError."""
        (tmp_path / "base.yaml").write_text(yaml.safe_dump({**base_config, "logging": {"level": "${NOT_SET_X}"}}))
        monkeypatch.delenv("NOT_SET_X", raising=False)

        with pytest.raises(ConfigError, match="NOT_SET_X"):
            ConfigLoader(config_dir=tmp_path).load_config(environ={})


class TestValidation:
    """Test validate_config."""

    def test_base_is_valid(self, base_config):
        """Test the shipped configuration validates."""
        validate_config(base_config)

    def test_missing_section(self, base_config):
        """Test a missing section is reported."""
        config = {k: v for k, v in base_config.items() if k != "cgm"}

        with pytest.raises(ConfigError, match="cgm"):
            validate_config(config)

    def test_negative_gamma(self, base_config):
        """Test negative gamma grids are rejected."""
        config = deep_merge(base_config, {"emos": {"gamma_grid": [1, -2]}})

        with pytest.raises(ConfigError, match="emos.gamma_grid"):
            validate_config(config)

    def test_infinite_threshold(self, base_config):
        """Test thresholds must be finite."""
        config = deep_merge(base_config, {"loss": {"threshold": float("inf")}})

        with pytest.raises(ConfigError, match="loss.threshold"):
            validate_config(config)

    def test_members(self, base_config):
        """Test ensemble sizes must be positive."""
        config = deep_merge(base_config, {"cgm": {"penalty_members": 0}})

        with pytest.raises(ConfigError, match="penalty_members"):
            validate_config(config)

    def test_station_count(self, base_config):
        """Test the synthetic generator needs stations."""
        config = deep_merge(base_config, {"data": {"synth": {"station_count": 0}}})

        with pytest.raises(ConfigError, match="station_count"):
            validate_config(config)
