"""Configuration, persistence and command-line orchestration."""

from .cli import main
from .config import ConfigError, RunConfig, load_config

__all__ = ["ConfigError", "RunConfig", "load_config", "main"]
