"""
Configuration Management
Named experiment presets (JSON files in ``configs/``) and process-level runtime
settings read from the environment.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Literal

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError
from .sweeps import SweepPlan

logger = logging.getLogger(__name__)

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR"]


class RuntimeSettings(BaseSettings):
    """Process settings; every field can be set as INTERBANK_<NAME> or in .env."""

    model_config = SettingsConfigDict(
        env_prefix="INTERBANK_", env_file=".env", extra="ignore"
    )

    log_level: LogLevel = "INFO"
    out_dir: Path = Path("runs")
    config_dir: Path = Path("configs")
    workers: int = Field(default=1, ge=1)
    failure_budget: int = Field(default=0, ge=0)


def deep_merge(d1: Dict[str, Any], d2: Dict[str, Any]) -> Dict[str, Any]:
    """Layer CLI overrides ``d2`` onto a preset or manifest config, recursively."""
    result = d1.copy()

    for key, value in d2.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = value

    return result


class ConfigManager:
    """Manages sweep preset files."""

    def __init__(self, config_dir: str = "configs"):
        self.config_dir = Path(config_dir)

    def _path(self, config_name: str) -> Path:
        return self.config_dir / f"{config_name}.json"

    def load_config(self, config_name: str) -> Dict[str, Any]:
        """Load a preset from JSON."""
        config_file = self._path(config_name)

        if not config_file.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_file}")

        with open(config_file, "r") as f:
            try:
                loaded: Any = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"Invalid JSON in {config_file}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(
                f"Invalid config format in {config_file}: expected object"
            )
        return loaded

    def save_config(self, config_name: str, config: Dict[str, Any]) -> None:
        """Validate and save a preset."""
        self.validate_config(config)
        self.config_dir.mkdir(parents=True, exist_ok=True)

        with open(self._path(config_name), "w") as f:
            json.dump(config, f, indent=2)

    def validate_config(self, config: Dict[str, Any]) -> bool:
        """A preset is valid when it builds a SweepPlan."""
        try:
            SweepPlan(**config)
        except ValidationError as exc:
            raise ConfigError(f"Invalid sweep preset: {exc}") from exc
        return True

    def get_plan(self, config_name: str, **overrides: Any) -> SweepPlan:
        """Preset plus explicit overrides (None values are ignored) as a SweepPlan."""
        config = deep_merge(
            self.load_config(config_name),
            {k: v for k, v in overrides.items() if v is not None},
        )
        logger.debug("plan %s: %s", config_name, config)
        return SweepPlan(**config)

    def list_configs(self) -> list[str]:
        """List all available presets."""
        return sorted(f.stem for f in self.config_dir.glob("*.json"))

    def get_config_info(self, config_name: str) -> Dict[str, Any]:
        """Summary of a preset with plan defaults filled in."""
        config = self.load_config(config_name)
        plan = SweepPlan(**config)

        return {
            "name": config_name,
            "n_values": list(plan.n_values),
            "kappa_values": list(plan.kappa_values) if plan.kappa_values else None,
            "steps": plan.steps,
            "trials": plan.trials,
            "delta": plan.delta,
            "epsilon_star": plan.epsilon_star,
            "has_seed": plan.seed is not None,
            "has_theta_grid": "theta_grid" in config,
        }
