"""
treedecomp - Configuration Management

This module handles loading and managing configuration settings
from files and environment variables.

Precedence, lowest first: dataclass defaults, a YAML or JSON file,
environment variables, then command line flags applied by the CLI.
"""

import os
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from ..core.exceptions import ConfigError
from ..core.models import ErrorMode, SimplificationPolicy, TiePolicy, parse_enum

logger = logging.getLogger(__name__)

THREADS_ENV = "LT_THREADS"
GENERATOR_FAMILIES = ("uniform", "composable")


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


@dataclass
class CorrelationConfig:
    """Correlation ingestion settings"""
    laplace: float = 0.0
    unit_tolerance: float = 1e-12

    def __post_init__(self):
        _require(self.laplace >= 0, f"laplace must be >= 0, got {self.laplace}")
        _require(self.unit_tolerance >= 0, f"unit_tolerance must be >= 0, got {self.unit_tolerance}")


@dataclass
class Stage1Config:
    """
    Greedy search settings

    Attributes:
        error_mode: max or mean aggregation for pair/tree and tree/tree errors
        tie_policy: precedence, finest_quad or lexicographic
        epsilon_tie: errors this close to the minimum count as ties
        split_check: narrow ties to candidates whose new clades look like splits
        workers: threads scoring candidates
        cache_max_n: largest n for which the quad table is precomputed
    """
    error_mode: ErrorMode = ErrorMode.MAX
    tie_policy: TiePolicy = TiePolicy.PRECEDENCE
    epsilon_tie: float = 1e-12
    split_check: bool = True
    workers: int = 1
    cache_max_n: int = 48

    def __post_init__(self):
        self.error_mode = parse_enum(ErrorMode, self.error_mode)
        self.tie_policy = parse_enum(TiePolicy, self.tie_policy)
        _require(self.epsilon_tie >= 0, f"epsilon_tie must be >= 0, got {self.epsilon_tie}")
        _require(int(self.workers) >= 1, f"workers must be >= 1, got {self.workers}")
        self.workers = int(self.workers)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_mode": self.error_mode.value,
            "tie_policy": self.tie_policy.value,
            "epsilon_tie": self.epsilon_tie,
            "split_check": self.split_check,
            "workers": self.workers,
            "cache_max_n": self.cache_max_n,
        }


@dataclass
class Stage2Config:
    """
    Parameter estimation settings

    Attributes:
        rho_min: smallest |rho| admitted to the log system
        simplification: tree transform applied before building the system
        exclude_small: drop rows below rho_min instead of failing
        clamp: clip edge magnitudes above 1 after reporting them
        edge_tolerance: |rho_edge| above 1 + edge_tolerance is a violation
        cond_max: largest acceptable condition number of the incidence matrix
        fit_starts: multi-start budget per hidden node
        fit_max_iter: iteration budget per start
        fit_tolerance: objective value that counts as converged
        seed: seed for the random fit starts
        workers: threads fitting hidden nodes
    """
    rho_min: float = 1e-6
    simplification: SimplificationPolicy = SimplificationPolicy.SUPPRESS_DEGREE_2
    exclude_small: bool = True
    clamp: bool = False
    edge_tolerance: float = 1e-9
    cond_max: float = 1e12
    fit_starts: int = 8
    fit_max_iter: int = 500
    fit_tolerance: float = 1e-10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.simplification = parse_enum(SimplificationPolicy, self.simplification)
        _require(self.rho_min >= 0, f"rho_min must be >= 0, got {self.rho_min}")
        _require(self.edge_tolerance >= 0, f"edge_tolerance must be >= 0, got {self.edge_tolerance}")
        _require(self.cond_max > 1, f"cond_max must exceed 1, got {self.cond_max}")
        _require(int(self.fit_starts) >= 1, f"fit_starts must be >= 1, got {self.fit_starts}")
        _require(int(self.fit_max_iter) >= 1, f"fit_max_iter must be >= 1, got {self.fit_max_iter}")
        _require(int(self.workers) >= 1, f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["simplification"] = self.simplification.value
        return data


@dataclass
class SynthConfig:
    """Generator settings for simulated models"""
    rho_low: float = 0.3
    rho_high: float = 0.9
    negative_prob: float = 0.0
    prior_low: float = 0.2
    prior_high: float = 0.8
    family: str = "uniform"

    def __post_init__(self):
        _require(0 < self.rho_low <= self.rho_high <= 1, f"need 0 < rho_low <= rho_high <= 1, got [{self.rho_low}, {self.rho_high}]")
        _require(0 <= self.negative_prob <= 1, f"negative_prob must lie in [0, 1], got {self.negative_prob}")
        _require(0 < self.prior_low <= self.prior_high < 1, f"need 0 < prior_low <= prior_high < 1, got [{self.prior_low}, {self.prior_high}]")
        _require(self.family in GENERATOR_FAMILIES, f"family must be one of {GENERATOR_FAMILIES}, got {self.family!r}")


@dataclass
class OutputConfig:
    """Where and what the CLI writes"""
    directory: str = "."
    trace: bool = False


_SECTIONS = {
    "correlation": CorrelationConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "synth": SynthConfig,
    "output": OutputConfig,
}


class Config:
    """
    Main configuration class that loads and manages all settings
    """

    def __init__(self):
        self.correlation = CorrelationConfig()
        self.stage1 = Stage1Config()
        self.stage2 = Stage2Config()
        self.synth = SynthConfig()
        self.output = OutputConfig()

    @classmethod
    def load(cls, config_path: Optional[Path] = None) -> "Config":
        """
        Load configuration from file and environment

        Args:
            config_path: Optional YAML or JSON file

        Returns:
            Config instance
        """
        config = cls()
        if config_path:
            config._load_from_file(Path(config_path))
        config._load_from_env()
        return config

    def _load_from_file(self, config_file: Path):
        """Load configuration from file"""
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                if config_file.suffix.lower() in [".yaml", ".yml"]:
                    data = yaml.safe_load(f)
                else:
                    data = json.load(f)
        except (OSError, yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read configuration {config_file}: {e}") from None

        self._apply_config_data(data or {})
        logger.info(f"Configuration loaded from {config_file}")

    def _apply_config_data(self, data: Dict[str, Any]):
        """Apply configuration data to config objects"""
        if not isinstance(data, dict):
            raise ConfigError("configuration root must be a mapping")
        for name, values in data.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown configuration section '{name}'")
            if not isinstance(values, dict):
                raise ConfigError(f"section '{name}' must be a mapping")
            self.update(name, **values)

    def update(self, section: str, **values: Any):
        """Replace fields of one section, re-running its validation"""
        current = getattr(self, section)
        known = {f.name for f in fields(current)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown keys in section '{section}': {sorted(unknown)}")
        merged = {f.name: getattr(current, f.name) for f in fields(current)}
        merged.update({k: v for k, v in values.items() if v is not None})
        try:
            setattr(self, section, _SECTIONS[section](**merged))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid value in section '{section}': {e}") from None

    def _load_from_env(self):
        """Load configuration from environment variables"""
        if "TREEDECOMP_ERROR_MODE" in os.environ:
            self.update("stage1", error_mode=os.environ["TREEDECOMP_ERROR_MODE"])

        if "TREEDECOMP_TIE_POLICY" in os.environ:
            self.update("stage1", tie_policy=os.environ["TREEDECOMP_TIE_POLICY"])

        if "TREEDECOMP_RHO_MIN" in os.environ:
            self.update("stage2", rho_min=_env_number("TREEDECOMP_RHO_MIN", float))

        if "TREEDECOMP_SEED" in os.environ:
            self.update("stage2", seed=_env_number("TREEDECOMP_SEED", int))

        if THREADS_ENV in os.environ:
            cap = _env_number(THREADS_ENV, int)
            if cap < 1:
                raise ConfigError(f"{THREADS_ENV} must be >= 1, got {cap}")
            self.update("stage1", workers=min(self.stage1.workers, cap))
            self.update("stage2", workers=min(self.stage2.workers, cap))

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary"""
        return {
            "correlation": {f.name: getattr(self.correlation, f.name) for f in fields(self.correlation)},
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "synth": {f.name: getattr(self.synth, f.name) for f in fields(self.synth)},
            "output": {f.name: getattr(self.output, f.name) for f in fields(self.output)},
        }


def worker_cap(requested: int) -> int:
    """Apply the LT_THREADS cap to a requested worker count"""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return requested
    cap = _env_number(THREADS_ENV, int)
    return max(1, min(requested, cap))


def _env_number(name: str, kind):
    try:
        return kind(os.environ[name])
    except ValueError:
        raise ConfigError(f"environment variable {name} must be a {kind.__name__}, got {os.environ[name]!r}") from None
