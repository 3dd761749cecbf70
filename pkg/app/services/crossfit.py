"""
Cross-fitting engine: out-of-fold nuisance predictions and residuals.
"""
import logging
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from app.models.errors import PreconditionError
from app.models.schemas import CrossFitResult, CrossFitTarget, Dataset, FoldAssignment, LearnerSpec
from app.services.datamodel import make_folds
from app.services.learners import fit_predict
from app.utils.helpers import derive_seed

logger = logging.getLogger(__name__)


def safe_corr(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0 when either series is constant."""
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / denom) if denom > 0 else 0.0


def residual_diagnostics(residuals: np.ndarray, z: np.ndarray, prefix: str = "corr_resid_z") -> Dict[str, float]:
    """``rmse``, ``corr(residual, Z_k)`` per control and their absolute maximum."""
    corrs = [safe_corr(residuals, z[:, k]) for k in range(z.shape[1])]
    out = {"rmse": float(np.sqrt(np.mean(residuals**2)))}
    out.update({f"{prefix}{k + 1}": c for k, c in enumerate(corrs)})
    out[f"{prefix}_max"] = float(max((abs(c) for c in corrs), default=0.0))
    return out


def _target(data: Dataset, target: Union[CrossFitTarget, str]) -> np.ndarray:
    return data.x if CrossFitTarget(target) is CrossFitTarget.TREATMENT else data.y


def _fit_fold(spec: LearnerSpec, data: Dataset, t: np.ndarray, folds: FoldAssignment, fold: int, seed: int):
    train, test = folds.split(fold)
    fold_spec = spec.with_seed(derive_seed(seed, fold))
    return test, fit_predict(fold_spec, data.z[train], t[train], data.z[test])


def crossfit_residualise(
    data: Dataset,
    target: Union[CrossFitTarget, str],
    spec: LearnerSpec,
    folds: int,
    seed: int,
    in_sample: bool = False,
    workers: int = 1,
    fold_assignment: Optional[FoldAssignment] = None,
) -> CrossFitResult:
    """
    Residualise the treatment or outcome on the controls.

    Each fold is predicted by a learner trained on the remaining folds, seeded with
    ``derive_seed(seed, fold)``. With ``in_sample`` one learner is trained and
    evaluated on the full sample instead.
    """
    if data.k == 0:
        raise PreconditionError("cross-fitting needs at least one control column")
    t = _target(data, target)

    if in_sample:
        predictions = fit_predict(spec.with_seed(derive_seed(seed, 0)), data.z, t, data.z)
        assignment = None
    else:
        assignment = fold_assignment or make_folds(data.n, folds, seed)
        parts = Parallel(n_jobs=workers)(
            delayed(_fit_fold)(spec, data, t, assignment, f, seed) for f in range(assignment.folds)
        )
        predictions = np.empty(data.n)
        for test, pred in parts:
            predictions[test] = pred

    residuals = t - predictions
    quality = residual_diagnostics(residuals, data.z)
    logger.debug("cross-fit %s with %s: rmse=%.4g", CrossFitTarget(target).value, spec, quality["rmse"])
    return CrossFitResult(
        predictions=predictions,
        residuals=residuals,
        fold_assignment=assignment,
        fit_quality=quality,
        in_sample=in_sample,
    )


def grid_sweep(
    data: Dataset,
    target: Union[CrossFitTarget, str],
    specs: Sequence[LearnerSpec],
    folds: int,
    seed: int,
    workers: int = 1,
) -> pd.DataFrame:
    """Cross-fitted RMSE of every candidate learner, best first."""
    rows = []
    for spec in specs:
        result = crossfit_residualise(data, target, spec, folds, seed, workers=workers)
        rows.append({
            "learner": str(spec),
            "rmse": result.fit_quality["rmse"],
            "corr_resid_z_max": result.fit_quality["corr_resid_z_max"],
        })
    table = pd.DataFrame(rows).sort_values("rmse", kind="stable").reset_index(drop=True)
    table.insert(0, "rank", np.arange(1, len(table) + 1))
    return table
