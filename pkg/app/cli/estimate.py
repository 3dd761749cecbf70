"""
``estimate``: one APE estimate on a CSV sample, optionally with a bootstrap CI.
"""
import argparse
import logging
from typing import Any, Dict

import pandas as pd

from app.cli.common import CommandContext, add_data_arguments, data_params, load_data
from app.models.errors import ParameterError, PreconditionError, RoleError
from app.models.schemas import BootstrapMethod, EstimatorName, EstimatorSpec, LearnerSpec, RunCommand
from app.services.estimators import run_estimator
from app.services.inference import bootstrap
from app.services.reporting import bootstrap_frame, estimate_frame, estimate_text

logger = logging.getLogger(__name__)

METHODS = {
    "rols": None,
    "rols_known": EstimatorName.ROLS_KNOWN,
    "rols_ml": EstimatorName.ROLS_ML,
    "dml": EstimatorName.DML,
    "dml_plr": EstimatorName.DML,
    "ols_fwl": EstimatorName.OLS_FWL,
    "simple_ols": EstimatorName.SIMPLE_OLS,
    "interacted_ols": EstimatorName.INTERACTED_OLS,
    "pl_spline": EstimatorName.PL_SPLINE,
    "pl_gam": EstimatorName.PL_SPLINE,
    "iv": EstimatorName.IV,
}


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("estimate", parents=parents, help="estimate the APE on a CSV sample")
    add_data_arguments(parser)
    parser.add_argument("--method", required=True, choices=sorted(METHODS))
    parser.add_argument("--learner-r", default=None, help='treatment learner, e.g. "gbt(trees=300,depth=3)"')
    parser.add_argument("--learner-l", default=None, help="outcome learner for dml (default: learner-r)")
    parser.add_argument("--folds", type=int, default=None)
    parser.add_argument("--in-sample", action="store_true", help="fit nuisances on the full sample")
    parser.add_argument("--center-nu", action="store_true", help="demean the residualised treatment")
    parser.add_argument("--degree", type=int, default=3, help="interacted_ols polynomial degree")
    parser.add_argument("--spline-degree", type=int, default=3)
    parser.add_argument("--knots", type=int, default=5)
    parser.add_argument("--r-column", default=None, help="column holding the known treatment form (ols_fwl)")
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--boot", type=int, default=0, help="bootstrap resamples (0 = none)")
    parser.add_argument("--boot-method", default="percentile", choices=["percentile", "normal"])
    parser.set_defaults(handler=run)


def resolve_estimator(args: argparse.Namespace, folds: int) -> EstimatorSpec:
    name = METHODS[args.method]
    if name is None:
        name = EstimatorName.ROLS_KNOWN if args.nu_column else EstimatorName.ROLS_ML
    fields: Dict[str, Any] = {
        "name": name,
        "folds": folds,
        "degree": args.degree,
        "spline_degree": args.spline_degree,
        "knots": args.knots,
        "center_nu": args.center_nu,
        "in_sample": args.in_sample,
    }
    if args.learner_r:
        fields["learner"] = LearnerSpec.parse(args.learner_r)
    if args.learner_l:
        fields["learner_l"] = LearnerSpec.parse(args.learner_l)
    return EstimatorSpec(**fields)


def _r_of_z(args: argparse.Namespace):
    if args.r_column is None:
        return None
    frame = pd.read_csv(args.data, float_precision="round_trip")
    if args.r_column not in frame.columns:
        raise RoleError(f"column '{args.r_column}' not found in {args.data}")
    return frame[args.r_column].to_numpy(dtype=float)


def run(args: argparse.Namespace, ctx: CommandContext) -> None:
    settings = ctx.settings
    folds = settings.folds if args.folds is None else args.folds
    alpha = settings.alpha if args.alpha is None else args.alpha
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    spec = resolve_estimator(args, folds)

    params = data_params(args)
    params.update({"estimator": str(spec), "alpha": alpha, "boot": args.boot, "boot_method": args.boot_method})
    ctx.begin(RunCommand.ESTIMATE, params)

    data = load_data(args)
    r_of_z = _r_of_z(args)
    estimate = run_estimator(spec, data, ctx.seed, r_of_z=r_of_z, alpha=alpha, workers=ctx.workers)
    logger.info("%s: APE %.6g (se %.3g)", spec, estimate.point, estimate.std_error)

    result = None
    if args.boot:
        if r_of_z is not None:
            raise PreconditionError("ols_fwl takes r(Z) from a fixed column and cannot be bootstrapped")
        method = BootstrapMethod.PERCENTILE if args.boot_method == "percentile" else BootstrapMethod.NORMAL_APPROX
        result = bootstrap(data, spec, args.boot, alpha, ctx.seed, method, ctx.workers, point=estimate.point)
        ctx.write("estimate_bootstrap", bootstrap_frame(result), result)

    ctx.write("estimate", estimate_frame(estimate), estimate)
    ctx.write_text("estimate", estimate_text(estimate, result))
    if ctx.store is not None:
        ctx.store.add_estimate(ctx.run_id, estimate)
