"""Command pipeline primitives"""

from .context import RunContext
from .stage import PipelineStage, PipelineStageResult, execute_pipeline, execute_stage_with_timing

__all__ = [
    "RunContext",
    "PipelineStage",
    "PipelineStageResult",
    "execute_pipeline",
    "execute_stage_with_timing",
]
