"""
Run Metrics Tracker

Operational counters and stage timings for one CLI command.

Counters: commands started/completed/failed, replicates completed/failed,
objective evaluations, artifacts written. Timers: per stage, in ms.

Timings are logged only; they never reach metrics.csv or manifest.json, so
re-running a command reproduces its primary outputs byte for byte.

Usage:
    metrics = RunMetrics()
    metrics.command_started("train")

    with metrics.time_stage("train"):
        ...

    metrics.command_completed()
    logger.info("run_metrics", **metrics.to_dict())
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional
from contextlib import contextmanager
import time


@dataclass
class RunMetrics:
    """
    Metrics collected during one command.

    Thread Safety: NOT thread-safe (one instance per command; replicate
    workers report back through the parent)
    """

    command: Optional[str] = None

    # Counters
    commands_started: int = 0
    commands_completed: int = 0
    commands_failed: int = 0
    replicates_completed: int = 0
    replicates_failed: int = 0
    objective_evaluations: int = 0
    artifacts_written: int = 0

    # Timers (ms)
    stage_durations_ms: Dict[str, float] = field(default_factory=dict)
    total_duration_ms: float = 0.0

    _start_time: Optional[float] = field(default=None, repr=False)

    def command_started(self, command: str):
        self.command = command
        self.commands_started += 1
        self._start_time = time.perf_counter()

    def command_completed(self):
        self.commands_completed += 1
        self._stop_clock()

    def command_failed(self):
        self.commands_failed += 1
        self._stop_clock()

    def _stop_clock(self):
        if self._start_time is not None:
            self.total_duration_ms = (time.perf_counter() - self._start_time) * 1000

    @contextmanager
    def time_stage(self, stage_name: str):
        """
        Time a stage; repeated stages accumulate.

        Usage:
            with metrics.time_stage("evaluate"):
                ...
        """
        start_time = time.perf_counter()
        try:
            yield
        finally:
            duration_ms = (time.perf_counter() - start_time) * 1000
            self.stage_durations_ms[stage_name] = (
                self.stage_durations_ms.get(stage_name, 0.0) + duration_ms
            )

    def record_replicate(self, succeeded: bool):
        if succeeded:
            self.replicates_completed += 1
        else:
            self.replicates_failed += 1

    def record_evaluations(self, count: int):
        self.objective_evaluations += count

    def record_artifact(self):
        self.artifacts_written += 1

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "command": self.command,
            "commands_started": self.commands_started,
            "commands_completed": self.commands_completed,
            "commands_failed": self.commands_failed,
            "replicates_completed": self.replicates_completed,
            "replicates_failed": self.replicates_failed,
            "objective_evaluations": self.objective_evaluations,
            "artifacts_written": self.artifacts_written,
            "total_duration_ms": round(self.total_duration_ms, 2),
        }
        for name, duration in sorted(self.stage_durations_ms.items()):
            data[f"{name}_duration_ms"] = round(duration, 2)
        return data

    def get_summary(self) -> str:
        """Human-readable summary."""
        if self.commands_failed > 0:
            status = "FAILED"
        elif self.commands_completed > 0:
            status = "COMPLETED"
        else:
            status = "IN PROGRESS"

        lines = [
            f"Command: {self.command} ({status})",
            f"Total Duration: {self.total_duration_ms:.0f}ms",
            "Stage Timings:",
        ]
        for name, duration in sorted(self.stage_durations_ms.items()):
            lines.append(f"  {name:<16}{duration:9.0f}ms")
        lines.extend([
            f"Replicates:        {self.replicates_completed} ok / {self.replicates_failed} failed",
            f"Objective evals:   {self.objective_evaluations}",
            f"Artifacts written: {self.artifacts_written}",
        ])
        return "\n".join(lines)

    def __repr__(self) -> str:
        return (
            f"RunMetrics(command={self.command!r}, "
            f"completed={self.commands_completed}, "
            f"failed={self.commands_failed}, "
            f"duration={self.total_duration_ms:.0f}ms)"
        )
