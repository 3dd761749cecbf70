"""
Nonparametric row bootstrap for any estimator.
"""
import logging
from typing import Callable, Optional, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from app.models.errors import ApeError, BootstrapError, ParameterError
from app.models.schemas import ApeEstimate, BootstrapMethod, BootstrapResult, Dataset, EstimatorSpec
from app.services.estimators import run_estimator
from app.utils.helpers import derive_seed, make_rng

logger = logging.getLogger(__name__)

MIN_RESAMPLES = 50
MAX_SKIP_SHARE = 0.10

EstimatorFn = Callable[[Dataset, int], Union[float, ApeEstimate]]
_FAILURES = (ApeError, np.linalg.LinAlgError, FloatingPointError)


def _as_callable(estimator: Union[EstimatorSpec, EstimatorFn]) -> EstimatorFn:
    if isinstance(estimator, EstimatorSpec):
        return lambda data, seed: run_estimator(estimator, data, seed)
    return estimator


def _point(value: Union[float, ApeEstimate]) -> float:
    return value.point if isinstance(value, ApeEstimate) else float(value)


def _resample(fn: EstimatorFn, data: Dataset, seed: int, b: int):
    """One resample; a failure is retried once with a derived seed. Returns (value, retried)."""
    for attempt, key in enumerate(((seed, b), (seed, b, 1))):
        sub_seed = derive_seed(*key)
        idx = make_rng(sub_seed).integers(0, data.n, data.n)
        try:
            return _point(fn(data.take(idx), sub_seed)), attempt
        except _FAILURES as exc:
            logger.debug("bootstrap resample %d attempt %d failed: %s", b, attempt, exc)
    return None, 1


def bootstrap(
    data: Dataset,
    estimator: Union[EstimatorSpec, EstimatorFn],
    B: int = 250,
    alpha: float = 0.05,
    seed: int = 0,
    method: BootstrapMethod = BootstrapMethod.PERCENTILE,
    workers: int = 1,
    point: Optional[float] = None,
) -> BootstrapResult:
    """
    Resample rows with replacement ``B`` times and rerun the whole estimator.

    ``estimator`` is an EstimatorSpec or a callable ``(dataset, seed) -> estimate``.
    Resample ``b`` draws its rows and its estimator seed from ``derive_seed(seed, b)``,
    so learners are refitted and folds redrawn on every resample.
    """
    if B < MIN_RESAMPLES:
        raise ParameterError(f"B must be >= {MIN_RESAMPLES}, got {B}")
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    fn = _as_callable(estimator)
    if point is None:
        point = _point(fn(data, seed))

    outcomes = Parallel(n_jobs=workers)(delayed(_resample)(fn, data, seed, b) for b in range(B))
    estimates = np.array([v for v, _ in outcomes if v is not None], dtype=np.float64)
    retried = sum(1 for _, attempt in outcomes if attempt)
    skipped = B - estimates.size
    if skipped:
        logger.warning("bootstrap: %d of %d resamples skipped", skipped, B)
    if skipped > MAX_SKIP_SHARE * B:
        raise BootstrapError(f"{skipped} of {B} bootstrap resamples failed")

    se = float(estimates.std(ddof=1))
    method = BootstrapMethod(method)
    if method is BootstrapMethod.PERCENTILE:
        ci_low, ci_high = (float(q) for q in np.quantile(estimates, [alpha / 2, 1 - alpha / 2]))
    else:
        half = float(norm.ppf(1 - alpha / 2)) * se
        ci_low, ci_high = point - half, point + half
    return BootstrapResult(
        estimates=estimates,
        point=point,
        se=se,
        ci_low=ci_low,
        ci_high=ci_high,
        method=method,
        alpha=alpha,
        seed=seed,
        retried=retried,
        skipped=skipped,
    )
