"""Services package."""
from app.services.db_service import DatabaseService
from app.services.estimators import run_estimator
from app.services.logger import RunLogger, configure_logging
from app.services.simulation import draw, run_grid, true_ape

__all__ = ["DatabaseService", "RunLogger", "configure_logging", "run_estimator", "draw", "run_grid", "true_ape"]
