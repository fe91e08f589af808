"""
Configuration module of the laboratory.
Defines every setting and tunable default, loaded from the environment
(prefix STCLAB_) and an optional .env file.
"""

from pydantic_settings import BaseSettings
from functools import lru_cache


class Settings(BaseSettings):
    """
    All application settings.
    Values are validated by pydantic and can be overridden from the environment,
    e.g. STCLAB_THREADS=2 or STCLAB_LOG_LEVEL=DEBUG.
    """

    # API settings
    PROJECT_NAME: str = "stclab"
    API_V1_STR: str = "/api/v1"

    # Logging settings
    LOG_LEVEL: str = "INFO"

    # Execution settings
    THREADS: int = 4  # caps sweep and audit parallelism
    SWEEP_CHUNK: int = 128  # grid points simulated together in one vectorized batch
    AUDIT_CHUNKS: int = 8  # independent random streams of the Lyapunov audit

    # Simulation settings
    OUTPUT_DIR: str = "results"
    DIVERGENCE_LIMIT: float = 1e12
    HANAN_G: float = 1.5**2 / 1.1**2

    model_config = {
        "case_sensitive": True,
        "env_prefix": "STCLAB_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance.
    Using lru_cache to avoid loading .env file on each call
    """
    return Settings()


# Create a global settings instance
settings = get_settings()
