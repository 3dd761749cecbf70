"""
APE Toolkit - average partial effect estimation
Command-line entry point: ``python -m app.main <command> ...``
"""
import argparse
import logging
import sys
import time
import uuid
from typing import List, Optional

from pydantic import ValidationError

from app.cli import COMMANDS
from app.cli.common import CommandContext, add_common_arguments, build_context
from app.models.errors import ApeError
from app.models.schemas import RunLog
from app.services.db_service import DatabaseService
from app.services.logger import RunLogger, configure_logging
from config.settings import Settings

logger = logging.getLogger("app.main")


class ToolkitArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = ToolkitArgumentParser(prog="ape", description="Average partial effect estimation toolkit")
    common = ToolkitArgumentParser(add_help=False)
    add_common_arguments(common)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS:
        module.register(subparsers, [common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings()
    except ValidationError as exc:
        print(f"error: invalid APE_* environment setting: {exc}", file=sys.stderr)
        return 1
    configure_logging(args.log_level or settings.log_level)

    run_id = f"run_{uuid.uuid4().hex[:8]}"
    started = time.perf_counter()
    ctx: Optional[CommandContext] = None
    store = DatabaseService(settings.database_url()) if (args.store or settings.store_results) else None
    exit_code, message = 0, None
    try:
        ctx = build_context(args, settings, run_id, store)
        args.handler(args, ctx)
    except ApeError as exc:
        exit_code, message = exc.exit_code, str(exc)
    except ValidationError as exc:
        exit_code, message = 1, str(exc)
    if message:
        print(f"error: {message}", file=sys.stderr)

    status = "ok" if exit_code == 0 else "error"
    if store is not None and ctx is not None and ctx.config is not None:
        store.finish_run(run_id, status)
    RunLogger(settings.logs_dir).log_run(RunLog(
        run_id=run_id,
        command=args.command,
        seed=ctx.seed if ctx else settings.seed,
        status=status,
        exit_code=exit_code,
        duration_seconds=round(time.perf_counter() - started, 3),
        outputs=ctx.outputs if ctx else [],
        config=ctx.config.model_dump(mode="json") if ctx and ctx.config else {},
        message=message,
    ))
    logger.debug("%s finished with exit code %d", run_id, exit_code)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
