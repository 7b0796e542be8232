"""Run configurations, shipped presets, task orchestration and the command line."""

from .config import TASKS, ConfigError, canonical_text, config_hash, load_config, validate
from .presets import PRESET_NAMES, preset
from .run import RunError, run

__all__ = ["TASKS", "ConfigError", "canonical_text", "config_hash", "load_config", "validate",
           "PRESET_NAMES", "preset", "RunError", "run"]
