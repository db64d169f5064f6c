"""Pipeline stages for CLI commands"""

from .data_stage import GenerateDataStage, LoadDataStage
from .model_stage import ClusterStage, DiagnoseStage, EvaluateStage, ReplicateStage
from .output_stage import WriteOutputsStage
from .simulation_stage import SimulateStage

__all__ = [
    "LoadDataStage",
    "GenerateDataStage",
    "ClusterStage",
    "ReplicateStage",
    "EvaluateStage",
    "DiagnoseStage",
    "SimulateStage",
    "WriteOutputsStage",
]
