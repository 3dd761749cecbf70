"""
Shared plumbing for the sub-commands: run context, data flags and report output.
"""
import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel

from app.models.errors import ParameterError
from app.models.schemas import ColumnRoles, Dataset, RunCommand, RunConfig
from app.services.datamodel import load_csv
from app.services.db_service import DatabaseService
from app.services.reporting import write_csv_report, write_json_report
from app.utils.helpers import check_seed
from config.settings import Settings

logger = logging.getLogger(__name__)

FORMATS = ("text", "csv", "json")


@dataclass
class CommandContext:
    """Everything a sub-command needs besides its own flags."""

    settings: Settings
    run_id: str
    seed: int
    workers: int
    out_dir: Path
    formats: List[str]
    store: Optional[DatabaseService] = None
    config: Optional[RunConfig] = None
    outputs: List[str] = field(default_factory=list)

    def begin(self, command: RunCommand, params: Dict[str, Any]) -> RunConfig:
        """Freeze the resolved configuration and open the stored run."""
        self.config = RunConfig(command=command, seed=self.seed, workers=self.workers, params=params)
        if self.store is not None:
            self.store.create_run(self.run_id, self.config)
        return self.config

    def echo(self) -> Dict[str, Any]:
        """Configuration embedded in every report; worker count excluded so reports match across pools."""
        if self.config is None:
            raise ParameterError("run configuration not resolved yet")
        return self.config.model_dump(mode="json", exclude={"workers"})

    def write(self, stem: str, frame: pd.DataFrame, payload: Optional[BaseModel] = None) -> None:
        if "csv" in self.formats:
            self.outputs.append(str(write_csv_report(frame, self.out_dir / f"{stem}.csv", self.echo())))
        if "json" in self.formats and payload is not None:
            self.outputs.append(str(write_json_report(payload, self.out_dir / f"{stem}.json", self.echo())))

    def write_text(self, stem: str, text: str) -> None:
        print(text)
        if "text" in self.formats:
            path = self.out_dir / f"{stem}.txt"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + "\n", encoding="utf-8")
            self.outputs.append(str(path))


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="base seed (default: APE_SEED or settings)")
    parser.add_argument("--workers", type=int, default=None, help="worker processes")
    parser.add_argument("--out", type=Path, default=None, help="report directory")
    parser.add_argument("--format", default="text,csv,json", help="comma list of text, csv, json")
    parser.add_argument("--store", action="store_true", help="also record the run in the results database")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")


def add_data_arguments(parser: argparse.ArgumentParser, require_treatment: bool = True) -> None:
    parser.add_argument("--data", type=Path, help="CSV file with a header row")
    parser.add_argument("--outcome", default=None, help="outcome column")
    parser.add_argument("--treatment", required=require_treatment, default=None, help="treatment column")
    parser.add_argument("--controls", default="", help="comma-separated control columns")
    parser.add_argument("--instrument", default=None, help="instrument column")
    parser.add_argument("--nu-column", default=None, help="column holding the known treatment error")


def parse_formats(text: str) -> List[str]:
    formats = [part.strip().lower() for part in text.split(",") if part.strip()]
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise ParameterError(f"unknown output format(s) {unknown}; choose from {', '.join(FORMATS)}")
    return formats


def build_context(args: argparse.Namespace, settings: Settings, run_id: str,
                  store: Optional[DatabaseService]) -> CommandContext:
    seed = check_seed(settings.seed if args.seed is None else args.seed)
    workers = settings.workers if args.workers is None else args.workers
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    return CommandContext(
        settings=settings,
        run_id=run_id,
        seed=seed,
        workers=workers,
        out_dir=args.out or settings.output_dir,
        formats=parse_formats(args.format),
        store=store,
    )


def roles_from_args(args: argparse.Namespace) -> ColumnRoles:
    if args.outcome is None:
        raise ParameterError("--outcome is required")
    return ColumnRoles(
        outcome=args.outcome,
        treatment=args.treatment,
        controls=[c.strip() for c in args.controls.split(",") if c.strip()],
        instrument=args.instrument,
        nu_known=args.nu_column,
    )


def load_data(args: argparse.Namespace) -> Dataset:
    if args.data is None:
        raise ParameterError("--data is required")
    data = load_csv(args.data, roles_from_args(args))
    logger.info("loaded %s: n=%d, %d control(s)", args.data, data.n, data.k)
    return data


def data_params(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "data": None if args.data is None else str(args.data),
        "outcome": args.outcome,
        "treatment": args.treatment,
        "controls": args.controls,
        "instrument": args.instrument,
        "nu_column": args.nu_column,
    }
