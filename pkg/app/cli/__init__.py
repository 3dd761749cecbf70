"""Command-line sub-commands."""
from app.cli import diagnose, estimate, figure1, simulate

COMMANDS = (estimate, simulate, diagnose, figure1)

__all__ = ["COMMANDS", "estimate", "simulate", "diagnose", "figure1"]
