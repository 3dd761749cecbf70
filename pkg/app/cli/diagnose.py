"""
``diagnose``: identification diagnostics.

Three modes: the moment ladder of a residualised treatment from CSV data (default),
the R-OLS weight decomposition of a synthetic design (``--decompose``), and the IV
moment-condition check of a synthetic IV design (``--iv-design``).
"""
import argparse
import logging

import numpy as np

from app.cli.common import CommandContext, add_data_arguments, data_params, load_data
from app.models.errors import DegenerateError, ParameterError
from app.models.schemas import (
    CrossFitTarget,
    DgpSpec,
    ErrorDistribution,
    Family,
    GFamily,
    IvDgpSpec,
    LearnerSpec,
    RForm,
    RunCommand,
)
from app.services.crossfit import crossfit_residualise
from app.services.diagnostics import empirical_weights, iv_moment_check, moment_profile, weight_decomposition
from app.services.reporting import decomposition_frame, iv_frame, moment_frame, text_table
from app.utils.helpers import format_float

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("diagnose", parents=parents, help="moment ladder and identification checks")
    add_data_arguments(parser, require_treatment=False)
    parser.add_argument("--learner-r", default=None, help="residualise the treatment with this learner")
    parser.add_argument("--folds", type=int, default=None)
    parser.add_argument("--max-order", type=int, default=5)
    parser.add_argument("--boot", type=int, default=200, help="bootstrap resamples for moment SEs")
    parser.add_argument("--z-threshold", type=float, default=2.0)
    parser.add_argument("--decompose", default=None, metavar="Y,X,M",
                        help="weight decomposition of a synthetic design, e.g. simple,simple,2")
    parser.add_argument("--error", default="normal(0,1)", help="treatment-error law for --decompose")
    parser.add_argument("--iv-design", default=None, choices=[f.value for f in RForm],
                        help="IV moment check for a synthetic r(W, Z) form")
    parser.add_argument("--g-family", default="simple", choices=[g.value for g in GFamily])
    parser.add_argument("--order", type=int, default=1, help="polynomial order M of synthetic designs")
    parser.add_argument("--n", type=int, default=100_000, help="synthetic sample size")
    parser.set_defaults(handler=run)


def _run_ladder(args: argparse.Namespace, ctx: CommandContext) -> None:
    if args.treatment is None:
        raise ParameterError("--treatment is required")
    if args.nu_column is None and args.learner_r is None:
        raise ParameterError("give a residual source: --nu-column or --learner-r")
    folds = ctx.settings.folds if args.folds is None else args.folds
    params = data_params(args)
    params.update({"learner_r": args.learner_r, "folds": folds, "max_order": args.max_order,
                   "boot": args.boot, "z_threshold": args.z_threshold})
    ctx.begin(RunCommand.DIAGNOSE, params)

    data = load_data(args)
    if np.ptp(data.x) == 0:
        raise DegenerateError(f"treatment '{args.treatment}' is constant")
    if args.nu_column is not None:
        nu_hat = data.nu_known
    else:
        fit = crossfit_residualise(data, CrossFitTarget.TREATMENT, LearnerSpec.parse(args.learner_r),
                                   folds, ctx.seed, workers=ctx.workers)
        nu_hat = fit.residuals

    profile = moment_profile(nu_hat, args.max_order, args.boot, ctx.seed, args.z_threshold)
    weights = empirical_weights(nu_hat, args.max_order - 2)
    ladder = moment_frame(profile)
    ladder["weight"] = weights
    ctx.write("diagnose_moments", ladder, profile)

    flagged = [int(p) for p, f in enumerate(profile.flags) if f]
    summary = "none" if not flagged else ", ".join(f"p={p}" for p in flagged)
    ctx.write_text("diagnose_moments", f"{text_table(ladder)}\n\nflagged orders: {summary}")


def _run_decompose(args: argparse.Namespace, ctx: CommandContext) -> None:
    parts = [p.strip().lower() for p in args.decompose.split(",")]
    if len(parts) != 3:
        raise ParameterError(f"--decompose expects Y,X,M, got '{args.decompose}'")
    try:
        spec = DgpSpec(y_family=Family(parts[0]), x_family=Family(parts[1]), M=int(parts[2]),
                       error_dist=ErrorDistribution.parse(args.error), n=args.n)
    except ValueError as exc:
        raise ParameterError(f"bad --decompose value '{args.decompose}': {exc}") from exc
    ctx.begin(RunCommand.DIAGNOSE, {"decompose": spec.label(), "M": spec.M, "n": args.n})

    table = weight_decomposition(spec, args.n, ctx.seed)
    frame = decomposition_frame(table)
    ctx.write("diagnose_decomposition", frame, table)
    ctx.write_text("diagnose_decomposition", "\n".join([
        text_table(frame),
        "",
        f"reconstructed beta  {format_float(table.reconstructed_beta)}",
        f"Cov/Var beta        {format_float(table.direct_beta)}",
        f"sample APE          {format_float(table.sample_ape)}",
    ]))


def _run_iv(args: argparse.Namespace, ctx: CommandContext) -> None:
    spec = IvDgpSpec(r_form=RForm(args.iv_design), g_family=GFamily(args.g_family), M=args.order, n=args.n)
    ctx.begin(RunCommand.DIAGNOSE, {"iv_design": args.iv_design, "g_family": args.g_family, "M": args.order,
                                    "n": args.n, "boot": args.boot, "z_threshold": args.z_threshold})
    report = iv_moment_check(spec, max(args.order, 2), args.n, ctx.seed, args.boot, args.z_threshold)
    frame = iv_frame(report)
    ctx.write("diagnose_iv", frame, report)
    ctx.write_text("diagnose_iv", "\n".join([
        report.scenario,
        text_table(frame),
        "",
        f"critical value {report.critical_value:.3f}; "
        f"IV_MC1 {'holds' if report.mc1_satisfied else 'fails'}; "
        f"IV_MC2 {'holds' if report.mc2_satisfied else 'fails'}",
    ]))


def run(args: argparse.Namespace, ctx: CommandContext) -> None:
    if args.decompose and args.iv_design:
        raise ParameterError("--decompose and --iv-design are exclusive")
    if args.decompose:
        _run_decompose(args, ctx)
    elif args.iv_design:
        _run_iv(args, ctx)
    else:
        _run_ladder(args, ctx)
