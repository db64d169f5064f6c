"""Logging and run metrics infrastructure"""

from .structured_logger import get_logger, setup_logging, StructuredLogger
from .run_metrics import RunMetrics

__all__ = [
    "get_logger",
    "setup_logging",
    "StructuredLogger",
    "RunMetrics",
]
