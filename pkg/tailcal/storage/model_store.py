"""
Model artifact persistence.

Artifacts are stored as versioned JSON documents (`schema_version` field).
Floats are written with round-trip precision so a loaded model predicts
exactly what the saved one did.

Usage:
    from tailcal.storage import save_model, load_model, restore_model

    save_model(model.to_artifact(), run_dir / "models" / "drn_r00.json")
    model = load_model(path).and_then(restore_model).unwrap()
"""

import json
from pathlib import Path
from typing import Any, Union

import numpy as np

from tailcal.infrastructure.logging import get_logger
from tailcal.models.model_artifact import ModelArtifact
from tailcal.services.cgm import CgmModel
from tailcal.services.drn import DrnModel
from tailcal.services.emos import EmosModel
from tailcal.services.errors import SchemaError, StorageError, TailCalError
from tailcal.services.result import Result


logger = get_logger(__name__)

FAMILIES = {"emos": EmosModel, "drn": DrnModel, "cgm": CgmModel}


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def dumps(document: Any) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(document, default=_json_default, sort_keys=True, indent=2) + "\n"


def save_model(artifact: ModelArtifact, path: Union[str, Path]) -> Result[Path]:
    """
    Write an artifact.

    Returns:
        Result[Path]: Written path or StorageError
    """
    path = Path(path)
    try:
        text = dumps(artifact.to_dict())
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except (OSError, TypeError, ValueError) as e:
        return Result.fail(StorageError(
            "Failed to write model",
            context={"path": str(path), "family": artifact.family, "error": str(e)}
        ))

    logger.info("model_saved", path=str(path), family=artifact.family)
    return Result.ok(path)


def load_model(path: Union[str, Path]) -> Result[ModelArtifact]:
    """
    Read an artifact.

    Returns:
        Result[ModelArtifact]: Artifact, StorageError when the file cannot be
            read, SchemaError when it is corrupted or has another schema version
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        return Result.fail(StorageError("Failed to read model", context={"path": str(path), "error": str(e)}))

    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        return Result.fail(SchemaError(
            "Model file is not valid JSON",
            context={"path": str(path), "line": e.lineno, "error": e.msg}
        ))

    return ModelArtifact.from_dict(document).map_err(
        lambda e: SchemaError(e.message, context={"path": str(path), **e.context})
        if isinstance(e, TailCalError) else e
    )


def restore_model(artifact: ModelArtifact) -> Result[Any]:
    """
    Rebuild the fitted model of an artifact.

    Returns:
        Result[EmosModel | DrnModel | CgmModel]: Model or SchemaError
    """
    try:
        return Result.ok(FAMILIES[artifact.family].from_artifact(artifact))
    except SchemaError as e:
        return Result.fail(e)
    except TailCalError as e:
        return Result.fail(SchemaError(e.message, context={"family": artifact.family, **e.context}))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        return Result.fail(SchemaError(
            "Model payload does not match its family",
            context={"family": artifact.family, "error": str(e)}
        ))
