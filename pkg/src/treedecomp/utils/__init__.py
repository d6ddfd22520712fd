"""
treedecomp - Utilities Module

This module contains utility functions and classes for configuration,
the quad error cache, helpers, and other supporting functionality.
"""

from .config import Config, CorrelationConfig, OutputConfig, Stage1Config, Stage2Config, SynthConfig
from .cache import QuadErrorCache
from .helpers import atomic_write_json, atomic_write_text, format_duration, setup_logging

__all__ = [
    "Config",
    "CorrelationConfig",
    "Stage1Config",
    "Stage2Config",
    "SynthConfig",
    "OutputConfig",
    "QuadErrorCache",
    "setup_logging",
    "format_duration",
    "atomic_write_text",
    "atomic_write_json",
]
