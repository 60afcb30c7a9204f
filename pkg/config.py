"""
Configuration management for kmsgraph.
Loads tolerances and oracle limits from .kmsgraph.yml, with environment overrides.
"""

import copy
import logging
import os
from typing import Any

import yaml

logger = logging.getLogger(__name__)

MAX_BASIS_ENV_VAR = "KMSGRAPH_MAX_BASIS"

DEFAULT_CONFIG: dict[str, Any] = {
    "tolerances": {
        "eigen_residual": 1e-10,
        "classification": 1e-8,
        "admissibility": 1e-9,
        "factoring": 1e-9,
        "probability": 1e-9,
        "verification": 1e-12,
    },
    "power_iteration": {
        "max_iterations": 100_000,
        "rayleigh_tol": 1e-13,
    },
    "oracle": {
        "max_basis": 20_000,
        "tail_target": 1e-8,
        "sample_length": 2,
        "parallelism": 4,
    },
    "output": {
        "significant_digits": 15,
    },
}


class Config:
    """Configuration manager for kmsgraph runs."""

    def __init__(self, config_dict: dict[str, Any] | None = None):
        """Initialize config with optional overrides."""
        self.config = copy.deepcopy(DEFAULT_CONFIG)
        if config_dict:
            self._merge_config(config_dict)

    def _merge_config(self, override: dict[str, Any]) -> None:
        """Merge override config into default config."""
        for key, value in override.items():
            if key in self.config:
                config_value = self.config[key]
                if isinstance(value, dict) and isinstance(config_value, dict):
                    # Deep merge for nested dicts
                    config_value.update(value)
                else:
                    self.config[key] = value

    @classmethod
    def load_from_file(cls, filepath: str = ".kmsgraph.yml") -> "Config":
        """Load configuration from YAML file, then apply environment overrides."""
        if not os.path.exists(filepath):
            config = cls()
        else:
            try:
                with open(filepath, encoding="utf-8") as f:
                    config_dict = yaml.safe_load(f) or {}
                if not isinstance(config_dict, dict):
                    raise ValueError("top level must be a mapping")
                config = cls(config_dict)
            except Exception as e:
                logger.warning("Failed to load config file %s: %s", filepath, e)
                config = cls()
        config.apply_environment()
        return config

    def apply_environment(self, environ: dict[str, str] | None = None) -> None:
        """Apply KMSGRAPH_* environment overrides."""
        env = os.environ if environ is None else environ
        raw = env.get(MAX_BASIS_ENV_VAR)
        if raw is None:
            return
        try:
            max_basis = int(raw)
            if max_basis < 1:
                raise ValueError("must be positive")
        except ValueError as e:
            logger.warning("Ignoring %s=%r: %s", MAX_BASIS_ENV_VAR, raw, e)
            return
        self.config["oracle"]["max_basis"] = max_basis

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value."""
        return self.config.get(key, default)

    def tolerance(self, name: str) -> float:
        """Get a named tolerance."""
        return float(self.config["tolerances"][name])

    def oracle(self, name: str) -> Any:
        """Get an oracle setting."""
        return self.config["oracle"][name]

    def set_tolerance(self, name: str, value: float) -> None:
        """Override a tolerance; it must be positive."""
        if value <= 0:
            raise ValueError(f"Tolerance {name} must be positive, got {value}")
        self.config["tolerances"][name] = value

    def __repr__(self) -> str:
        return f"Config({self.config})"


def default_tolerance(name: str) -> float:
    """Tolerance from DEFAULT_CONFIG, used as keyword defaults across the library."""
    return float(DEFAULT_CONFIG["tolerances"][name])


def default_setting(section: str, name: str) -> Any:
    """Any other DEFAULT_CONFIG entry."""
    return DEFAULT_CONFIG[section][name]
