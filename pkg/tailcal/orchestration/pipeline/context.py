"""
Run Context - State Management for Command Execution

Carries the resolved configuration, seed, output directory and the state
produced by each stage of one CLI command. Stages share data only through
the context, so each can be tested in isolation.

Usage:
    from tailcal.orchestration.pipeline import RunContext

    context = RunContext(command="train", config=config, seed=7, out_dir=Path("runs/drn"))

    context.set("train", train_dataset)
    train = context.require("train")

    context.mark_stage_complete("load_data")
    if context.is_stage_complete("load_data"):
        ...
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from tailcal.infrastructure.logging import RunMetrics
from tailcal.models.model_artifact import ModelArtifact
from tailcal.services.errors import TailCalError
from tailcal.storage.run_directory import RunDirectory


@dataclass
class RunContext:
    """
    Command execution context.

    Thread Safety: NOT thread-safe (one context per command)
    Immutability: Mutable (stages add state as they execute)
    """

    command: str
    """CLI command being run (simulate, train, evaluate, ...)"""

    config: Dict[str, Any]
    """Fully resolved configuration (echoed to config.json)"""

    seed: int = 0
    """Global seed; replicate r uses seed + r"""

    out_dir: Optional[Path] = None
    """Run directory; None skips writing"""

    options: Dict[str, Any] = field(default_factory=dict)
    """Command options that are not configuration (paths, family, baseline)"""

    metrics: RunMetrics = field(default_factory=RunMetrics)

    # outputs written by WriteOutputsStage
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    """Relative CSV path -> frame (metrics.csv, summary.csv, histories/...)"""

    curves: Dict[str, pd.DataFrame] = field(default_factory=dict)
    """Curve name -> frame, written to curves/<name>.csv"""

    models: Dict[str, ModelArtifact] = field(default_factory=dict)
    """Artifact name -> artifact, written to models/<name>.json"""

    documents: Dict[str, Any] = field(default_factory=dict)
    """Relative JSON path -> document (summary.json, data_quality.json)"""

    failures: List[Dict[str, Any]] = field(default_factory=list)
    """Failed replicates and sweep cells, each with a kind"""

    _state: Dict[str, Any] = field(default_factory=dict)
    _completed_stages: List[str] = field(default_factory=list)
    _stage_timings: Dict[str, float] = field(default_factory=dict)
    _output: Optional[RunDirectory] = None

    # ========================================================================
    # STATE
    # ========================================================================

    def get(self, key: str, default: Any = None) -> Any:
        return self._state.get(key, default)

    def set(self, key: str, value: Any) -> None:
        self._state[key] = value

    def has(self, key: str) -> bool:
        return key in self._state

    def require(self, key: str) -> Any:
        """
        Get a value a previous stage must have stored.

        Raises:
            TailCalError: Key missing (stage ordering bug)
        """
        if key not in self._state:
            raise TailCalError("Missing stage input", context={"key": key, "command": self.command,
                                                               "completed": self._completed_stages})
        return self._state[key]

    def add_failures(self, kind: str, failures: List[Dict[str, Any]]) -> None:
        self.failures.extend({"kind": kind, **f} for f in failures)

    def option(self, key: str, default: Any = None) -> Any:
        return self.options.get(key, default)

    def rng(self, offset: int = 0) -> np.random.Generator:
        return np.random.default_rng(self.seed + offset)

    @property
    def output(self) -> Optional[RunDirectory]:
        """Run directory writer, created on first use."""
        if self._output is None and self.out_dir is not None:
            self._output = RunDirectory(self.out_dir)
        return self._output

    # ========================================================================
    # STAGE TRACKING
    # ========================================================================

    def mark_stage_complete(self, stage_name: str, duration_seconds: float = 0.0) -> None:
        if stage_name not in self._completed_stages:
            self._completed_stages.append(stage_name)
        if duration_seconds > 0:
            self._stage_timings[stage_name] = duration_seconds

    def is_stage_complete(self, stage_name: str) -> bool:
        return stage_name in self._completed_stages

    def get_completed_stages(self) -> List[str]:
        return self._completed_stages.copy()

    def get_stage_timing(self, stage_name: str) -> Optional[float]:
        return self._stage_timings.get(stage_name)

    def get_total_duration(self) -> float:
        return sum(self._stage_timings.values())

    # ========================================================================
    # UTILITY
    # ========================================================================

    def __repr__(self) -> str:
        stages = ", ".join(self._completed_stages) or "none"
        return f"RunContext(command={self.command}, seed={self.seed}, completed_stages=[{stages}])"

    def summary(self) -> Dict[str, Any]:
        """
        Execution summary (for logging; timings never reach run outputs).

        Returns:
            Dictionary with command, seed, stages and state keys
        """
        return {
            "command": self.command,
            "seed": self.seed,
            "out_dir": None if self.out_dir is None else str(self.out_dir),
            "completed_stages": self._completed_stages.copy(),
            "stage_count": len(self._completed_stages),
            "total_duration": self.get_total_duration(),
            "state_keys": sorted(self._state.keys()),
        }
