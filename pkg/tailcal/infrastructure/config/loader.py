"""
YAML Configuration Loader with Overlay Support

Implements hierarchical configuration loading:
1. base.yaml (system defaults)
2. families/{family}.yaml (emos / drn / cgm overrides)
3. environments/{env}.yaml (desk-scale or full-scale sizes)
4. optional JSON document (--config on the command line)
5. TAILCAL_<SECTION>__<KEY> environment overrides (and TAILCAL_SEED)

Supports:
- Deep merging of nested dictionaries
- Environment variable substitution (${VAR_NAME})
- Validation of required sections and value ranges
"""

import json
import math
import os
import re
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import load_dotenv

from tailcal.services.errors import ConfigError


ENV_PREFIX = "TAILCAL_"

REQUIRED_SECTIONS = (
    "system",
    "data",
    "scoring",
    "loss",
    "optim",
    "emos",
    "drn",
    "cgm",
    "simulation",
    "logging",
)

_VAR_PATTERN = re.compile(r'\$\{([A-Z_][A-Z0-9_]*)\}')


def deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Deep merge two dictionaries. Override values take precedence.

    Nested dictionaries merge recursively; lists and scalars replace.
    """
    result = dict(base)

    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, Mapping):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = value

    return result


class ConfigLoader:
    """
    Hierarchical configuration loader.

    Usage:
        loader = ConfigLoader()
        config = loader.load_config(family="drn", env="desk")

        epochs = config["drn"]["epochs"]
        threshold = config["loss"]["threshold"]
    """

    def __init__(self, config_dir: Optional[Path] = None):
        """
        Args:
            config_dir: Root config directory. Defaults to project_root/config/
        """
        if config_dir is None:
            project_root = Path(__file__).parent.parent.parent.parent
            config_dir = project_root / "config"

        self.config_dir = Path(config_dir)

        if not self.config_dir.exists():
            raise ConfigError(
                "Config directory not found",
                context={"path": str(self.config_dir)}
            )

        load_dotenv()

    def load_config(
        self,
        family: Optional[str] = None,
        env: Optional[str] = None,
        json_path: Optional[Path] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> Dict[str, Any]:
        """
        Load and merge configuration from all layers.

        Args:
            family: Model family overlay (emos, drn, cgm). None for base only.
            env: Environment overlay (desk, full). None for no overlay.
            json_path: Optional JSON document merged after the YAML layers
            environ: Environment mapping for overrides (defaults to os.environ)

        Returns:
            Merged configuration dictionary

        Raises:
            ConfigError: If a layer is missing, unparsable or the result is invalid
        """
        config = self._load_yaml(self.config_dir / "base.yaml")

        if family:
            family_path = self.config_dir / "families" / f"{family}.yaml"
            if not family_path.exists():
                raise ConfigError(
                    f"Family config not found: {family_path}",
                    context={"valid": self.get_families()}
                )
            config = deep_merge(config, self._load_yaml(family_path))

        if env:
            env_path = self.config_dir / "environments" / f"{env}.yaml"
            if not env_path.exists():
                raise ConfigError(
                    f"Environment config not found: {env_path}",
                    context={"valid": self.get_environments()}
                )
            config = deep_merge(config, self._load_yaml(env_path))

        if json_path is not None:
            config = deep_merge(config, self._load_json(Path(json_path)))

        config = self._substitute_env_vars(config)
        config = apply_env_overrides(config, os.environ if environ is None else environ)

        validate_config(config)

        return config

    def _load_yaml(self, path: Path) -> Dict[str, Any]:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse YAML in {path}: {e}")

        if not isinstance(data, dict):
            raise ConfigError(
                f"Invalid YAML structure in {path}: expected mapping",
                context={"got": type(data).__name__}
            )
        return data

    def _load_json(self, path: Path) -> Dict[str, Any]:
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except FileNotFoundError:
            raise ConfigError(f"JSON config not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"Failed to parse JSON config {path}",
                context={"line": e.lineno, "reason": e.msg}
            )

        if not isinstance(data, dict):
            raise ConfigError(f"JSON config {path} must hold an object")
        return data

    def _substitute_env_vars(self, config: Any) -> Any:
        """Replace ${VAR} in every string value; unset variables are errors."""
        if isinstance(config, dict):
            return {key: self._substitute_env_vars(value) for key, value in config.items()}
        if isinstance(config, list):
            return [self._substitute_env_vars(value) for value in config]
        if isinstance(config, str):
            return self._substitute_string(config)
        return config

    def _substitute_string(self, value: str) -> str:
        def replacer(match):
            var_name = match.group(1)
            var_value = os.environ.get(var_name)
            if var_value is None:
                raise ConfigError(
                    f"Environment variable not set: {var_name}. "
                    f"Set {var_name} in the environment or a .env file."
                )
            return var_value

        return _VAR_PATTERN.sub(replacer, value)

    def get_families(self) -> list[str]:
        return self._stems("families")

    def get_environments(self) -> list[str]:
        return self._stems("environments")

    def _stems(self, sub: str) -> list[str]:
        directory = self.config_dir / sub
        if not directory.exists():
            return []
        return sorted(path.stem for path in directory.glob("*.yaml"))


def apply_env_overrides(config: Dict[str, Any], environ: Mapping[str, str]) -> Dict[str, Any]:
    """
    Apply TAILCAL_<SECTION>__<KEY>[__<SUBKEY>...] overrides.

    Values are parsed as YAML so "250" stays an int and "true" a bool.
    TAILCAL_SEED is shorthand for system.seed.
    """
    result = config
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue

        suffix = name[len(ENV_PREFIX):]
        if suffix == "SEED":
            path = ["system", "seed"]
        elif "__" in suffix:
            path = [part.lower() for part in suffix.split("__")]
        else:
            continue

        try:
            value = yaml.safe_load(environ[name])
        except yaml.YAMLError as e:
            raise ConfigError(
                f"Unparsable override {name}",
                context={"value": environ[name], "reason": str(e)}
            )

        override: Dict[str, Any] = {path[-1]: value}
        for part in reversed(path[:-1]):
            override = {part: override}
        result = deep_merge(result, override)

    return result


def validate_config(config: Dict[str, Any]) -> None:
    """
    Validate the merged configuration.

    Raises:
        ConfigError: On missing sections or out-of-range values
    """
    for key in REQUIRED_SECTIONS:
        if key not in config:
            raise ConfigError(f"Missing required configuration section: {key}")

    seed = config["system"].get("seed")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("system.seed must be a nonnegative integer", context={"seed": seed})

    for section in ("loss", "simulation"):
        threshold = config[section].get("threshold")
        if not isinstance(threshold, (int, float)) or not math.isfinite(threshold):
            raise ConfigError(
                f"{section}.threshold must be a finite number",
                context={"threshold": threshold}
            )

    for section in ("emos", "drn", "cgm"):
        grid = config[section].get("gamma_grid", [])
        if any((not isinstance(g, (int, float))) or g < 0 for g in grid):
            raise ConfigError(
                f"{section}.gamma_grid must hold nonnegative numbers",
                context={"gamma_grid": grid}
            )

    for key in ("members", "finetune_members", "penalty_members"):
        members = config["cgm"].get(key)
        if not isinstance(members, int) or members < 1:
            raise ConfigError(f"cgm.{key} must be >= 1", context={key: members})

    if config["data"]["synth"].get("station_count", 0) < 1:
        raise ConfigError("data.synth.station_count must be >= 1")


def load_config(
    family: Optional[str] = None,
    env: Optional[str] = None,
    json_path: Optional[Path] = None,
) -> Dict[str, Any]:
    """Convenience wrapper around ConfigLoader().load_config()."""
    return ConfigLoader().load_config(family=family, env=env, json_path=json_path)
