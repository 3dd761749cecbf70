"""
APE Toolkit Configuration Settings
"""
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()

# Project root directory
PROJECT_ROOT = Path(__file__).parent.parent


class Settings(BaseSettings):
    """Toolkit settings loaded from APE_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="APE_", env_file=".env", extra="ignore")

    # Project root
    project_root: Path = PROJECT_ROOT

    # Reproducibility
    seed: int = 42
    workers: int = 1

    # Logging
    log_level: str = "INFO"

    # Estimation defaults
    folds: int = 5
    boot_reps: int = 250
    alpha: float = 0.05
    oracle_n: int = 1_000_000

    # Run store
    store_results: bool = False
    results_db: Optional[Path] = None

    # Paths
    output_dir: Path = PROJECT_ROOT / "data" / "reports"
    logs_dir: Path = PROJECT_ROOT / "data" / "logs"
    grids_dir: Path = PROJECT_ROOT / "config" / "grids"

    def database_url(self) -> str:
        """SQLAlchemy URL of the run store."""
        path = self.results_db or (self.project_root / "data" / "ape_runs.db")
        return f"sqlite:///{path}"


# Global settings instance
settings = Settings()


def get_grid_file(name: str) -> Path:
    """Resolve a bundled grid config by preset name."""
    return settings.grids_dir / f"{name}.cfg"
