# settings.py

from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings, read from GROUPSET_* environment variables or a .env file."""

    model_config = SettingsConfigDict(env_prefix="GROUPSET_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    runs_dir: str = "workspace/runs"
    default_seed: int = 0
    slow_tests: bool = False


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Get the cached settings instance."""
    return Settings()
