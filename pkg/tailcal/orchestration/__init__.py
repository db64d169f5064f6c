"""Command orchestration"""

from .pipeline import PipelineStage, PipelineStageResult, RunContext, execute_pipeline

__all__ = [
    "RunContext",
    "PipelineStage",
    "PipelineStageResult",
    "execute_pipeline",
]
