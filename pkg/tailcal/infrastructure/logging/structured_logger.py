"""
Event Logger

Event-style logging for tailcal runs over the standard logging module.
Every message is an event name followed by key=value pairs; a logger bound
with family and replicate prints them as a bracketed prefix, so replicate
workers running side by side stay readable.

Usage:
    from tailcal.infrastructure.logging import get_logger

    logger = get_logger(__name__)
    logger = logger.bind(family="drn", replicate=3)

    logger.info("finetune_step", step=12, loss=0.8123, penalty=0.0412)

Output:
    [INFO] [drn] [r03] finetune_step step=12 loss=0.8123 penalty=0.0412
"""

import logging
import sys
from typing import Dict, Any, Optional

import numpy as np


PREFIX_KEYS = ("family", "replicate")


def _render(value: Any) -> str:
    """Compact rendering for floats and numpy scalars."""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


class StructuredLogger:
    """
    Structured logger with immutable context binding.

    Wraps logging.Logger; every call takes an event name plus key-value pairs.
    """

    def __init__(self, name: str, base_logger: Optional[logging.Logger] = None):
        """
        Args:
            name: Logger name (typically __name__)
            base_logger: Optional base logger (for testing)
        """
        self.name = name
        self._logger = base_logger or logging.getLogger(name)
        self._context: Dict[str, Any] = {}

    def bind(self, **kwargs) -> "StructuredLogger":
        """Return a new logger carrying the extra context."""
        new_logger = StructuredLogger(self.name, self._logger)
        new_logger._context = {**self._context, **kwargs}
        return new_logger

    def _format_message(self, event: str, **kwargs) -> str:
        all_data = {**self._context, **kwargs}

        context_parts = []
        if "family" in all_data:
            context_parts.append(f"[{all_data['family']}]")
        if "replicate" in all_data:
            context_parts.append(f"[r{int(all_data['replicate']):02d}]")

        context_prefix = " ".join(context_parts)
        if context_prefix:
            context_prefix += " "

        kv_string = " ".join(
            f"{key}={_render(value)}"
            for key, value in all_data.items()
            if key not in PREFIX_KEYS
        )
        if kv_string:
            kv_string = " " + kv_string

        return f"{context_prefix}{event}{kv_string}"

    def debug(self, event: str, **kwargs):
        if self._logger.isEnabledFor(logging.DEBUG):
            self._logger.debug(self._format_message(event, **kwargs))

    def info(self, event: str, **kwargs):
        self._logger.info(self._format_message(event, **kwargs))

    def warning(self, event: str, **kwargs):
        self._logger.warning(self._format_message(event, **kwargs))

    def error(self, event: str, **kwargs):
        self._logger.error(self._format_message(event, **kwargs))

    def exception(self, event: str, **kwargs):
        """Log with traceback."""
        self._logger.exception(self._format_message(event, **kwargs))


def setup_logging(level: str = "INFO", format_type: str = "simple") -> None:
    """
    Configure the root logger.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR)
        format_type: simple or detailed
    """
    log_level = getattr(logging, level.upper(), logging.INFO)

    if format_type == "simple":
        log_format = "[%(levelname)s] %(message)s"
    else:
        log_format = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"

    logging.basicConfig(
        level=log_level,
        format=log_format,
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stdout,
        force=True
    )


def get_logger(name: str) -> StructuredLogger:
    """Structured logger for a module."""
    return StructuredLogger(name)


setup_logging()
