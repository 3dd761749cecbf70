"""Config package."""
from config.settings import settings, Settings, get_grid_file

__all__ = ["settings", "Settings", "get_grid_file"]
