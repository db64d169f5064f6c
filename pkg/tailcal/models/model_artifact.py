"""
Serialized fitted model.

The payload is family specific (EMOS theta per cluster plus clustering,
or network weights plus embedding table and input scaling); everything
else records training provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

from tailcal.services.errors import SchemaError
from tailcal.services.result import Result


SCHEMA_VERSION = 1
FAMILIES = ("emos", "drn", "cgm")


@dataclass(frozen=True)
class ModelArtifact:
    """
    Attributes:
        family: emos | drn | cgm
        payload: Family-specific parameters (JSON-ready nested lists)
        loss_spec: LossSpec.to_dict() of the objective the model was trained on
        seed: Training seed
        gamma: Penalty weight of the training objective
        provenance: Free-form training context (epochs, data path, parent model, ...)
        schema_version: File format version
    """

    family: str
    payload: Dict[str, Any]
    loss_spec: Optional[Dict[str, Any]] = None
    seed: int = 0
    gamma: float = 0.0
    provenance: Dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "family": self.family,
            "seed": self.seed,
            "gamma": self.gamma,
            "loss_spec": self.loss_spec,
            "provenance": self.provenance,
            "payload": self.payload,
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> Result["ModelArtifact"]:
        """
        Parse and validate a model document.

        Returns:
            Result[ModelArtifact]: Artifact or SchemaError
        """
        if not isinstance(data, Mapping):
            return Result.fail(SchemaError("Model document must be an object"))

        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            return Result.fail(SchemaError(
                "Unsupported model schema version",
                context={"found": version, "expected": SCHEMA_VERSION}
            ))

        missing = [key for key in ("family", "payload") if key not in data]
        if missing:
            return Result.fail(SchemaError("Model document is missing keys", context={"missing": missing}))

        family = data["family"]
        if family not in FAMILIES:
            return Result.fail(SchemaError(f"Unknown model family: {family}", context={"valid": FAMILIES}))
        if not isinstance(data["payload"], Mapping):
            return Result.fail(SchemaError("Model payload must be an object"))

        try:
            return Result.ok(ModelArtifact(
                family=family,
                payload=dict(data["payload"]),
                loss_spec=data.get("loss_spec"),
                seed=int(data.get("seed", 0)),
                gamma=float(data.get("gamma", 0.0)),
                provenance=dict(data.get("provenance") or {}),
                schema_version=version,
            ))
        except (TypeError, ValueError) as e:
            return Result.fail(SchemaError("Malformed model document", context={"error": str(e)}))
