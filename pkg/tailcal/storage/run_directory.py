"""
Run output directory.

One directory per command run:

    config.json       fully resolved configuration
    metrics.csv       metric table
    curves/*.csv      calibration curve and histogram data
    models/*.json     model artifacts
    manifest.json     every artifact written plus failed replicates / cells

Nothing time-dependent is written, so identical runs produce identical files.
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

from tailcal.infrastructure.logging import get_logger
from tailcal.models.model_artifact import ModelArtifact
from tailcal.services.errors import StorageError
from tailcal.services.result import Result
from tailcal.storage.model_store import dumps, save_model


logger = get_logger(__name__)


class RunDirectory:
    """
    Writer for one run directory.

    Thread Safety: NOT thread-safe (one writer per run)
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._artifacts: Dict[str, Dict[str, Any]] = {}
        self._failures: List[Dict[str, Any]] = []

    def _write_text(self, relpath: str, text: str, kind: str, **info: Any) -> Result[Path]:
        path = self.root / relpath
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8", newline="\n")
        except OSError as e:
            return Result.fail(StorageError("Failed to write run artifact",
                                            context={"path": str(path), "error": str(e)}))
        self._artifacts[relpath] = {"path": relpath, "kind": kind, **info}
        logger.debug("artifact_written", path=relpath, kind=kind)
        return Result.ok(path)

    def write_json(self, relpath: str, document: Any, kind: str = "json") -> Result[Path]:
        try:
            text = dumps(document)
        except (TypeError, ValueError) as e:
            return Result.fail(StorageError("Document is not JSON serializable",
                                            context={"path": relpath, "error": str(e)}))
        return self._write_text(relpath, text, kind)

    def write_frame(self, relpath: str, frame: pd.DataFrame, kind: str = "table") -> Result[Path]:
        text = frame.to_csv(index=False, lineterminator="\n")
        return self._write_text(relpath, text, kind, rows=len(frame))

    def write_curve(self, name: str, frame: pd.DataFrame) -> Result[Path]:
        return self.write_frame(f"curves/{name}.csv", frame, kind="curve")

    def write_model(self, name: str, artifact: ModelArtifact) -> Result[Path]:
        relpath = f"models/{name}.json"
        written = save_model(artifact, self.root / relpath)
        if written.is_ok():
            self._artifacts[relpath] = {"path": relpath, "kind": "model", "family": artifact.family}
        return written

    def record_failure(self, kind: str, label: str, error: Exception) -> None:
        """Note a failed replicate or sweep cell for the manifest."""
        self._failures.append({
            "kind": kind,
            "label": label,
            "error": type(error).__name__,
            "message": str(error),
        })

    def add_failures(self, kind: str, failures: Sequence[Mapping[str, Any]]) -> None:
        """Note failures already recorded as dicts (replicate suites, sweeps)."""
        self._failures.extend({"kind": kind, **f} for f in failures)

    @property
    def artifacts(self) -> List[Dict[str, Any]]:
        return [self._artifacts[k] for k in sorted(self._artifacts)]

    @property
    def failures(self) -> List[Dict[str, Any]]:
        return list(self._failures)

    def write_manifest(self, command: str, extra: Optional[Dict[str, Any]] = None) -> Result[Path]:
        manifest = {
            "command": command,
            "artifacts": self.artifacts,
            "failures": self.failures,
            **(extra or {}),
        }
        return self._write_text("manifest.json", dumps(manifest), "manifest")

    def __repr__(self) -> str:
        return f"RunDirectory(root='{self.root}', artifacts={len(self._artifacts)})"
