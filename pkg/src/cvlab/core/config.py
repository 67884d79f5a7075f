"""
Configuration Management
========================

Runtime settings for cvlab, validated with Pydantic and read from the
environment (prefix ``CVLAB_``) or a ``.env`` file in the working directory.

Sections:
- RuntimeSettings: logging level, format and destination
- ComputationSettings: split budget, worker count, numerical thresholds
- SelectionDefaults: default scheme and criterion choices of the CLI
"""

from pathlib import Path
from typing import List, Literal, Optional

from dotenv import load_dotenv
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

_ENV_CONFIG = SettingsConfigDict(
    env_prefix="CVLAB_",
    env_file=".env",
    env_file_encoding="utf-8",
    case_sensitive=False,
    extra="ignore",
)


class RuntimeSettings(BaseSettings):
    """Logging configuration."""

    model_config = _ENV_CONFIG

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(
        default="WARNING"
    )
    log_format: Literal["structured", "simple"] = Field(default="simple")
    log_file: Optional[str] = Field(default=None, description="Log file name inside log_dir")
    log_dir: str = Field(default="./logs")

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_level(cls, v):
        """Accept lower-case level names from the environment."""
        return v.upper() if isinstance(v, str) else v


class ComputationSettings(BaseSettings):
    """Budgets and numerical thresholds."""

    model_config = _ENV_CONFIG

    max_splits: int = Field(default=10**6, ge=1, description="Leave-p-out enumeration budget")
    jobs: int = Field(default=1, ge=1, le=256, description="Worker threads for experiments")
    default_seed: int = Field(default=0, ge=0, description="Seed used when none is given")
    condition_threshold: float = Field(default=1e12, gt=1.0)
    leverage_margin: float = Field(default=1e-10, gt=0.0, lt=1.0)
    stderr_band: float = Field(default=3.0, gt=0.0, description="Acceptance band in standard errors")
    true_risk_test_size: int = Field(default=20000, ge=100)


class SelectionDefaults(BaseSettings):
    """Defaults of the command-line front end."""

    model_config = _ENV_CONFIG

    scheme: Literal["holdout", "vfold", "mc", "loo", "lpo", "rvfold"] = Field(default="vfold")
    v: int = Field(default=5, ge=2, description="Number of folds for selection")
    corrected_for_selection: bool = Field(default=False)
    corrected_for_reporting: bool = Field(default=True)


class Settings(BaseSettings):
    """
    Main settings object combining all configuration sections.
    """

    model_config = _ENV_CONFIG

    runtime: RuntimeSettings = Field(default_factory=RuntimeSettings)
    computation: ComputationSettings = Field(default_factory=ComputationSettings)
    selection: SelectionDefaults = Field(default_factory=SelectionDefaults)

    def __init__(self, **kwargs):
        """Load ``.env`` before reading the environment."""
        env_file = Path(".env")
        if env_file.exists():
            load_dotenv(env_file)
        super().__init__(**kwargs)

    def get_log_config(self) -> dict:
        """Keyword arguments for ``configure_logging``."""
        return {
            "level": self.runtime.log_level,
            "format_type": self.runtime.log_format,
            "log_file": self.runtime.log_file,
            "log_dir": self.runtime.log_dir,
        }


# Global settings instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """
    Get the global settings instance.

    Settings are loaded once per process; call ``reload_settings`` after
    changing the environment.
    """
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reload_settings() -> Settings:
    """Discard the cached settings and load them again."""
    global _settings
    _settings = None
    return get_settings()


def validate_configuration() -> tuple[bool, List[str]]:
    """
    Check settings for combinations that load fine but make little sense.

    Returns:
        Tuple of (is_valid, list_of_errors)
    """
    errors = []
    try:
        settings = get_settings()
        if settings.computation.stderr_band < 1.0:
            errors.append("stderr_band below 1 makes statistical checks fail by chance")
        if settings.selection.v > settings.computation.max_splits:
            errors.append("default number of folds exceeds the split budget")
        if settings.runtime.log_file and not settings.runtime.log_dir:
            errors.append("log_file requires log_dir")
    except Exception as e:
        errors.append(f"Configuration validation error: {e}")
    return len(errors) == 0, errors
