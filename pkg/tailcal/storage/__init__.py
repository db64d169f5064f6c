"""Model artifact and run directory storage"""

from .model_store import load_model, restore_model, save_model
from .run_directory import RunDirectory

__all__ = [
    "load_model",
    "restore_model",
    "save_model",
    "RunDirectory",
]
