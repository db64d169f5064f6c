"""
Pipeline Stage Protocol - Standard Interface for Command Stages

Every CLI command is a list of stages run in order over one RunContext.

Usage:
    from tailcal.orchestration.pipeline import PipelineStage, RunContext, execute_pipeline

    class LoadDataStage:
        def execute(self, context: RunContext) -> Result[RunContext]:
            context.set("train", dataset)
            return Result.ok(context)

    result = execute_pipeline([("load_data", LoadDataStage())], context)
"""

import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Protocol, Tuple

from tailcal.infrastructure.logging import get_logger
from tailcal.orchestration.pipeline.context import RunContext
from tailcal.services.errors import TailCalError
from tailcal.services.result import Result


logger = get_logger(__name__)


@dataclass
class PipelineStageResult:
    """
    Result from executing a stage, with timing.
    """

    context_result: Result[RunContext]
    stage_name: str
    duration_seconds: float = 0.0
    warnings: List[str] = field(default_factory=list)
    metrics: Dict[str, Any] = field(default_factory=dict)

    def is_success(self) -> bool:
        return self.context_result.is_ok()

    def is_failure(self) -> bool:
        return self.context_result.is_err()

    def unwrap_context(self) -> RunContext:
        return self.context_result.unwrap()

    def summary(self) -> Dict[str, Any]:
        return {
            "stage_name": self.stage_name,
            "success": self.is_success(),
            "duration_seconds": self.duration_seconds,
            "warnings_count": len(self.warnings),
            "warnings": self.warnings,
            "metrics": self.metrics,
        }


class PipelineStage(Protocol):
    """
    Protocol defining the stage contract.

    Stage Contract:
    1. Read inputs from context (context.require("train"))
    2. Perform stage logic
    3. Store outputs in context (context.set("records", frame))
    4. Return Result.ok(context) or Result.fail(error)

    Error Handling:
    - Return Result.fail(error) for fatal errors
    - Record per-replicate or per-cell failures with context.add_failures and continue
    """

    def execute(self, context: RunContext) -> Result[RunContext]:
        ...


# ============================================================================
# HELPER FUNCTIONS
# ============================================================================

def execute_stage_with_timing(stage: PipelineStage, context: RunContext, stage_name: str) -> PipelineStageResult:
    """
    Execute a stage, time it and mark it complete on success.

    Typed errors a stage raises instead of returning are turned into a
    failed result.
    """
    start_time = time.perf_counter()

    with context.metrics.time_stage(stage_name):
        try:
            context_result = stage.execute(context)
        except TailCalError as e:
            context_result = Result.fail(e)

    duration = time.perf_counter() - start_time

    if context_result.is_ok():
        context_result.unwrap().mark_stage_complete(stage_name, duration)
        logger.debug("stage_completed", stage=stage_name, command=context.command)
    else:
        logger.error("stage_failed", stage=stage_name, command=context.command,
                     error=str(context_result.unwrap_err()))

    return PipelineStageResult(context_result=context_result, stage_name=stage_name, duration_seconds=duration)


def execute_pipeline(stages: List[Tuple[str, PipelineStage]], context: RunContext) -> Result[RunContext]:
    """
    Execute stages sequentially, stopping at the first failure.

    Returns:
        Result[RunContext]: Final context, or the error of the first failing stage
    """
    current_context = context

    for stage_name, stage in stages:
        stage_result = execute_stage_with_timing(stage, current_context, stage_name)

        if stage_result.is_failure():
            return stage_result.context_result

        current_context = stage_result.unwrap_context()

    return Result.ok(current_context)
