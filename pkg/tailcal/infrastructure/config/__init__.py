"""Configuration management infrastructure."""

from .loader import ConfigLoader, deep_merge, load_config

__all__ = ["ConfigLoader", "deep_merge", "load_config"]
