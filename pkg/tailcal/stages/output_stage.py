"""
WriteOutputsStage - persist a command's outputs to its run directory.

Writes the resolved configuration, every table, curve, model and JSON
document the earlier stages put on the context, then the manifest listing
them together with failed replicates and sweep cells.
"""

from typing import Any, Dict, List

from tailcal.infrastructure.logging import get_logger
from tailcal.orchestration.pipeline.context import RunContext
from tailcal.services.result import Result


logger = get_logger(__name__)

CONFIG_FILE = "config.json"


class WriteOutputsStage:
    """
    Expected context inputs:
    - tables, curves, models, documents, failures (any may be empty)

    Context outputs:
    - written: relative paths written, in write order

    A context without out_dir writes nothing.
    """

    def execute(self, context: RunContext) -> Result[RunContext]:
        output = context.output
        if output is None:
            logger.info("outputs_skipped", command=context.command)
            return Result.ok(context)

        bound_logger = logger.bind(command=context.command, out_dir=str(output.root))
        written: List[str] = []

        writes = [(CONFIG_FILE, lambda: output.write_json(CONFIG_FILE, context.config, kind="config"))]
        for relpath, frame in sorted(context.tables.items()):
            writes.append((relpath, lambda r=relpath, f=frame: output.write_frame(r, f)))
        for name, frame in sorted(context.curves.items()):
            writes.append((f"curves/{name}.csv", lambda n=name, f=frame: output.write_curve(n, f)))
        for name, artifact in sorted(context.models.items()):
            writes.append((f"models/{name}.json", lambda n=name, a=artifact: output.write_model(n, a)))
        for relpath, document in sorted(context.documents.items()):
            writes.append((relpath, lambda r=relpath, d=document: output.write_json(r, d)))

        for relpath, write in writes:
            result = write()
            if result.is_err():
                bound_logger.error("output_failed", path=relpath, error=str(result.unwrap_err()))
                return result
            written.append(relpath)
            context.metrics.record_artifact()

        by_kind: Dict[str, List[Dict[str, Any]]] = {}
        for failure in context.failures:
            entry = dict(failure)
            by_kind.setdefault(entry.pop("kind", "run"), []).append(entry)
        for kind, failures in by_kind.items():
            output.add_failures(kind, failures)

        manifest = output.write_manifest(context.command, extra={"seed": context.seed})
        if manifest.is_err():
            return manifest
        written.append("manifest.json")

        context.set("written", written)
        bound_logger.info("outputs_written", artifacts=len(written), failures=len(context.failures))
        return Result.ok(context)
