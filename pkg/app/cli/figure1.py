"""
``figure1``: R-OLS versus DML under imperfect neural-network nuisance fits.
"""
import argparse
import logging

from app.cli.common import CommandContext
from app.models.schemas import Figure1Config, RunCommand
from app.services.reporting import figure1_frame, slopes_frame, text_table
from app.services.simulation import figure1_experiment, figure1_slopes

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("figure1", parents=parents, help="nuisance-quality experiment (plot-ready CSV)")
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--epochs", type=int, nargs=2, default=[50, 200], metavar=("LO", "HI"))
    parser.add_argument("--folds", type=int, default=4)
    parser.set_defaults(handler=run)


def run_experiment(config: Figure1Config, ctx: CommandContext) -> None:
    ctx.begin(RunCommand.FIGURE1, {
        "reps": config.reps,
        "n": config.n,
        "epochs_range": list(config.epochs_range),
        "folds": config.folds,
    })
    records = figure1_experiment(config.reps, config.n, config.epochs_range, ctx.seed, config.folds, ctx.workers)
    ctx.write("figure1", figure1_frame(records))

    slopes = slopes_frame(figure1_slopes(records))
    ctx.write("figure1_slopes", slopes)
    ctx.write_text("figure1_slopes", f"{len(records)} replications\n{text_table(slopes)}")


def run(args: argparse.Namespace, ctx: CommandContext) -> None:
    config = Figure1Config(reps=args.reps, n=args.n, epochs_range=tuple(args.epochs), folds=args.folds,
                           seed=ctx.seed)
    run_experiment(config, ctx)
