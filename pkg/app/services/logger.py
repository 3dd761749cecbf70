"""
APE Toolkit Logging Module
Console logging setup and a JSONL record of every CLI run.
"""
import json
import logging
from pathlib import Path
from typing import Optional

from app.models.schemas import RunLog
from app.utils.helpers import format_timestamp
from config.settings import settings

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: str = "INFO") -> None:
    """Install a single stderr handler on the ``app`` logger."""
    root = logging.getLogger("app")
    root.handlers.clear()
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False


class RunLogger:
    """Logger for recording CLI runs to a JSONL file."""

    def __init__(self, logs_dir: Optional[Path] = None):
        self.logs_dir = Path(logs_dir or settings.logs_dir)
        # JSONL so runs can be streamed and grepped
        self.log_file = self.logs_dir / "run_logs.jsonl"

    def log_run(self, entry: RunLog) -> None:
        """
        Record a single run.

        Args:
            entry: The run log entry to record
        """
        self.logs_dir.mkdir(parents=True, exist_ok=True)
        log_dict = entry.model_dump(mode="json")
        log_dict["timestamp"] = format_timestamp(entry.timestamp)

        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(log_dict, ensure_ascii=False) + "\n")

