"""Configuration management for memlab.

This module provides centralized configuration management using Pydantic BaseSettings,
supporting environment variable overrides (prefix ``MEMLAB_``) and validation.
"""

from functools import lru_cache
from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings with environment variable support."""

    model_config = SettingsConfigDict(
        env_prefix="MEMLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    app_version: str = Field(default="0.1.0", description="Application version")
    environment: str = Field(default="development", description="Runtime environment")
    log_level: str = Field(default="INFO", description="Logging level")
    log_json: bool = Field(default=False, description="Force JSON log rendering")

    # Execution
    threads: int = Field(
        default=1, ge=1, description="Worker cap for parallel probe and chunk sections"
    )
    output_dir: str = Field(default="runs", description="Root directory for run artifacts")
    default_seed: int = Field(default=0, description="Seed used when a run names none")

    # Numerics
    ns_steps: int = Field(default=5, ge=1, description="Newton-Schulz iterations for Atlas")
    tol_fit: float = Field(default=1e-6, gt=0.0, description="Capacity fit tolerance")
    max_lifted_dim: int = Field(
        default=1_000_000, ge=1, description="Largest feature-map output dimension"
    )
    paper_scale: bool = Field(
        default=False, description="Use full-size learnability dimensions (d=256)"
    )

    @field_validator("environment")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        """Validate environment value."""
        allowed = {"development", "staging", "production", "test"}
        if v not in allowed:
            raise ValueError(f"Environment must be one of {allowed}")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        allowed = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        v = v.upper()
        if v not in allowed:
            raise ValueError(f"Log level must be one of {allowed}")
        return v

    @property
    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.environment == "production"

    @property
    def learnability_dim(self) -> int:
        """Token dimension for learnability settings."""
        return 256 if self.paper_scale else 32

    @property
    def swa_window(self) -> int:
        """Sliding-window width for the windowed learnability setting."""
        return 512 if self.paper_scale else 64

    @property
    def output_path(self) -> Path:
        """Output root as a path."""
        return Path(self.output_dir)


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Export settings instance
settings = get_settings()
