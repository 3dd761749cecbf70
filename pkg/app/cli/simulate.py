"""
``simulate``: Monte Carlo grids from a grid file or a bundled preset.

Base seed precedence: ``--seed``, then ``APE_SEED``, then the ``seed`` the grid file
declares.
"""
import argparse
import logging

from app.cli.common import CommandContext
from app.cli.figure1 import run_experiment
from app.models.errors import ParameterError
from app.models.schemas import Figure1Config, GridConfig, RunCommand
from app.services.reporting import grid_tables, replications_frame, sim_frame
from app.services.simulation import FULL_SCALE_REPS, PRESETS, load_grid, preset, run_grid

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("simulate", parents=parents, help="run a simulation grid")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--grid", default=None, help="INI grid file")
    source.add_argument("--preset", default=None, help=f"bundled grid: {', '.join(PRESETS)}")
    parser.add_argument("--reps", type=int, default=None, help="override replications")
    parser.add_argument("--oracle-n", type=int, default=None, help="sample size of the true-APE oracle")
    parser.add_argument("--full-scale", action="store_true", help=f"use {FULL_SCALE_REPS} replications")
    parser.set_defaults(handler=run)


def _base_seed(args: argparse.Namespace, ctx: CommandContext, file_seed: int) -> int:
    if args.seed is not None or "seed" in ctx.settings.model_fields_set:
        return ctx.seed
    return file_seed


def run(args: argparse.Namespace, ctx: CommandContext) -> None:
    if args.preset is not None:
        config = preset(args.preset, args.full_scale)
    else:
        config = load_grid(args.grid)
        if args.full_scale:
            config = config.model_copy(update={"reps": FULL_SCALE_REPS})

    if isinstance(config, Figure1Config):
        ctx.seed = _base_seed(args, ctx, config.seed)
        if args.reps is not None:
            config = config.model_copy(update={"reps": args.reps})
        run_experiment(config, ctx)
        return
    _run_grid(args, config, ctx)


def _run_grid(args: argparse.Namespace, grid: GridConfig, ctx: CommandContext) -> None:
    reps = grid.reps if args.reps is None else args.reps
    if reps < 2:
        raise ParameterError(f"reps must be >= 2, got {reps}")
    oracle_n = args.oracle_n or grid.oracle_n or ctx.settings.oracle_n
    seed = ctx.seed = _base_seed(args, ctx, grid.seed)
    ctx.begin(RunCommand.SIMULATE, {
        "grid": grid.name,
        "reps": reps,
        "oracle_n": oracle_n,
        "designs": sorted(set(grid.blocks.values())),
        "estimators": {e.label: str(e) for e in grid.estimators},
    })
    logger.info("grid %s: %d designs x %d estimators x %d reps", grid.name, len(grid.specs),
                len(grid.estimators), reps)

    report = run_grid(grid.specs, grid.estimators, reps, seed, ctx.workers, oracle_n)
    stem = f"simulate_{grid.name}"
    ctx.write(stem, sim_frame(report), report)
    ctx.write(f"{stem}_replications", replications_frame(report))
    ctx.write_text(stem, grid_tables(report, grid.blocks))
    if ctx.store is not None:
        ctx.store.add_sim_report(ctx.run_id, report)
