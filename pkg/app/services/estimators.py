"""
Average partial effect estimators.

R-OLS (known and ML-estimated treatment error), OLS with the known treatment form
(FWL route), DML partialling-out, and the regression baselines: simple OLS,
interacted OLS with a delta-method APE, and a partially linear spline model.
Plus the just-identified IV ratio.
"""
from typing import Callable, Dict, Optional, Union

import numpy as np
from scipy.stats import norm

from app.models.errors import PreconditionError, ShapeError
from app.models.schemas import (
    ApeEstimate,
    CrossFitTarget,
    Dataset,
    EstimatorName,
    EstimatorSpec,
    IvInput,
    LearnerSpec,
    Method,
    RolsInput,
)
from app.services.crossfit import crossfit_residualise
from app.services.datamodel import make_folds
from app.services.numkit import (
    bspline_design,
    polynomial_design,
    polynomial_x_derivative,
    sandwich_variance,
    solve_ls,
    stack_design,
)
from app.utils.helpers import derive_seed


RForm = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


def _estimate(
    point: float,
    se: float,
    method: Method,
    n: int,
    alpha: float = 0.05,
    diagnostics: Optional[Dict[str, float]] = None,
) -> ApeEstimate:
    half = float(norm.ppf(1.0 - alpha / 2.0)) * se
    return ApeEstimate(
        point=point,
        std_error=se,
        ci_low=point - half,
        ci_high=point + half,
        method=method,
        n_used=n,
        diagnostics=diagnostics or {},
    )


def _ratio_with_hc0(nu: np.ndarray, y: np.ndarray):
    """``Σνy / Σν²`` and the HC0 SE of the no-intercept regression of y on ν."""
    ss = float(nu @ nu)
    point = float(nu @ y) / ss
    u = y - point * nu
    se = float(np.sqrt(np.sum((nu * u) ** 2))) / ss
    return point, se


# ============ Residualised-treatment estimators ============

def rols(
    nu: np.ndarray,
    y: np.ndarray,
    center_nu: bool = False,
    method: Method = Method.ROLS_KNOWN_NU,
    alpha: float = 0.05,
    diagnostics: Optional[Dict[str, float]] = None,
) -> ApeEstimate:
    """
    R-OLS: ``Σν̂Y / Σν̂²`` without intercept, HC0 standard error.

    ``center_nu`` demeans ν̂ first, turning the raw-moment ratio into Cov/Var.
    """
    nu = np.asarray(nu, dtype=np.float64)
    if center_nu:
        nu = nu - nu.mean()
    inputs = RolsInput(nu=nu, y=y)
    point, se = _ratio_with_hc0(inputs.nu, inputs.y)
    return _estimate(point, se, method, inputs.nu.size, alpha, diagnostics)


def plr_from_residuals(
    nu_hat: np.ndarray,
    y_resid: np.ndarray,
    alpha: float = 0.05,
    diagnostics: Optional[Dict[str, float]] = None,
) -> ApeEstimate:
    """
    Partialling-out solution ``θ = E_n[ν̂ ũ] / E_n[ν̂²]``.

    SE is the influence-function plug-in ``sqrt(E_n[ψ²] / E_n[ν̂²]² / n)`` with
    ``ψ = (ũ - θν̂) ν̂``.
    """
    inputs = RolsInput(nu=nu_hat, y=y_resid)
    nu, u = inputs.nu, inputs.y
    n = nu.size
    theta = float(nu @ u) / float(nu @ nu)
    psi = (u - theta * nu) * nu
    se = float(np.sqrt(np.mean(psi**2) / np.mean(nu**2) ** 2 / n))
    return _estimate(theta, se, Method.DML_PLR, n, alpha, diagnostics)


def _nu_diagnostics(result, prefix: str = "nu") -> Dict[str, float]:
    quality = result.fit_quality
    out = {key.replace("corr_resid_z", "corr_nu_z"): value for key, value in quality.items() if key != "rmse"}
    out[f"rmse_{prefix}"] = quality["rmse"]
    return out


def rols_ml(
    data: Dataset,
    spec: LearnerSpec,
    folds: int,
    seed: int,
    in_sample: bool = False,
    center_nu: bool = False,
    alpha: float = 0.05,
    workers: int = 1,
) -> ApeEstimate:
    """R-OLS on ν̂ = X - r̂(Z) from a cross-fitted (or in-sample) learner."""
    fit = crossfit_residualise(data, CrossFitTarget.TREATMENT, spec, folds, seed, in_sample, workers)
    return rols(fit.residuals, data.y, center_nu, Method.ROLS_ML, alpha, _nu_diagnostics(fit, "r"))


def dml_plr(
    data: Dataset,
    spec_r: LearnerSpec,
    spec_l: LearnerSpec,
    folds: int,
    seed: int,
    in_sample: bool = False,
    alpha: float = 0.05,
    workers: int = 1,
) -> ApeEstimate:
    """
    Double ML for the partially linear model.

    Both nuisances share one partition drawn from ``seed``; the r- and l-learners
    are seeded from ``derive_seed(seed, 1)`` and ``derive_seed(seed, 2)``.
    """
    assignment = None if in_sample else make_folds(data.n, folds, seed)
    fit_r = crossfit_residualise(
        data, CrossFitTarget.TREATMENT, spec_r, folds, derive_seed(seed, 1), in_sample, workers, assignment
    )
    fit_l = crossfit_residualise(
        data, CrossFitTarget.OUTCOME, spec_l, folds, derive_seed(seed, 2), in_sample, workers, assignment
    )
    diagnostics = _nu_diagnostics(fit_r, "r")
    diagnostics["rmse_l"] = fit_l.fit_quality["rmse"]
    return plr_from_residuals(fit_r.residuals, fit_l.residuals, alpha, diagnostics)


# ============ Regression estimators ============

def _x_coefficient(design, y: np.ndarray, method: Method, alpha: float) -> ApeEstimate:
    fit = solve_ls(design, y)
    cov = sandwich_variance(design, fit)
    j = design.index("x")
    return _estimate(
        float(fit.coefficients[j]),
        float(np.sqrt(max(cov.matrix[j, j], 0.0))),
        method,
        design.n,
        alpha,
    )


def ols_fwl(data: Dataset, r_form: RForm, alpha: float = 0.05) -> ApeEstimate:
    """Regress Y on [X, r(Z), 1]; the X coefficient with its sandwich SE."""
    r = r_form(data.z) if callable(r_form) else np.asarray(r_form, dtype=np.float64)
    if r.shape != (data.n,):
        raise ShapeError(f"r(Z) has shape {r.shape}, expected ({data.n},)")
    design = stack_design({"x": data.x, "r(z)": r, "1": np.ones(data.n)})
    return _x_coefficient(design, data.y, Method.OLS_FWL, alpha)


def simple_ols(data: Dataset, alpha: float = 0.05) -> ApeEstimate:
    """Y on [1, X, Z_1..Z_K]."""
    columns = {"1": np.ones(data.n), "x": data.x}
    columns.update({f"z{k + 1}": data.z[:, k] for k in range(data.k)})
    return _x_coefficient(stack_design(columns), data.y, Method.SIMPLE_OLS, alpha)


def interacted_ols(data: Dataset, degree: int = 3, alpha: float = 0.05) -> ApeEstimate:
    """
    Full polynomial in (X, Z) of total ``degree``.

    The APE is the sample mean of the fitted polynomial's X-derivative, which is
    linear in the coefficients: ``APE = g'β`` with ``g`` the mean monomial
    derivative, so ``Var = g'Vg`` with V the sandwich covariance.
    """
    design = polynomial_design(data.x, data.z, degree)
    fit = solve_ls(design, data.y)
    cov = sandwich_variance(design, fit)
    gradient = polynomial_x_derivative(data.x, data.z, design).mean(axis=0)
    point = float(gradient @ fit.coefficients)
    se = float(np.sqrt(max(gradient @ cov.matrix @ gradient, 0.0)))
    return _estimate(point, se, Method.INTERACTED_OLS, data.n, alpha, {"columns": float(design.q)})


def pl_spline(data: Dataset, spline_degree: int = 3, knots: int = 5, alpha: float = 0.05) -> ApeEstimate:
    """Y on [1, X, additive B-spline bases of each control]."""
    if data.k == 0:
        raise PreconditionError("pl_spline needs at least one control column")
    basis = bspline_design(data.z, spline_degree, knots)
    columns = {"1": np.ones(data.n), "x": data.x}
    columns.update({label: basis.values[:, j] for j, label in enumerate(basis.column_labels) if label != "1"})
    return _x_coefficient(stack_design(columns), data.y, Method.PL_SPLINE, alpha)


# ============ Instrumental variables ============

def iv_ape(w: np.ndarray, x: np.ndarray, y: np.ndarray, alpha: float = 0.05) -> ApeEstimate:
    """
    ``β = Σ w̃ y / Σ w̃ x`` with ``w̃ = w - mean(w)``.

    HC0 influence-function SE from residuals of the just-identified fit with intercept.
    """
    inputs = IvInput(w=w, x=x, y=y)
    w_c = inputs.w - inputs.w.mean()
    first_stage = float(w_c @ inputs.x)
    beta = float(w_c @ inputs.y) / first_stage
    u = (inputs.y - inputs.y.mean()) - beta * (inputs.x - inputs.x.mean())
    se = float(np.sqrt(np.sum((w_c * u) ** 2))) / abs(first_stage)
    corr = float(np.corrcoef(inputs.w, inputs.x)[0, 1])
    return _estimate(beta, se, Method.IV_APE, inputs.w.size, alpha, {"first_stage_corr": corr})


# ============ Registry ============

def run_estimator(
    spec: EstimatorSpec,
    data: Dataset,
    seed: int,
    r_of_z: Optional[RForm] = None,
    alpha: float = 0.05,
    workers: int = 1,
) -> ApeEstimate:
    """Dispatch a parsed EstimatorSpec on ``data``."""
    name = spec.name
    if name is EstimatorName.ROLS_KNOWN:
        if data.nu_known is None:
            raise PreconditionError("rols_known needs a known treatment-error column")
        return rols(data.nu_known, data.y, spec.center_nu, alpha=alpha)
    if name is EstimatorName.ROLS_ML:
        return rols_ml(data, spec.learner, spec.folds, seed, spec.in_sample, spec.center_nu, alpha, workers)
    if name is EstimatorName.DML:
        return dml_plr(
            data, spec.learner, spec.learner_l or spec.learner, spec.folds, seed, spec.in_sample, alpha, workers
        )
    if name is EstimatorName.OLS_FWL:
        if r_of_z is None:
            raise PreconditionError("ols_fwl needs the known treatment form r(Z)")
        return ols_fwl(data, r_of_z, alpha)
    if name is EstimatorName.SIMPLE_OLS:
        return simple_ols(data, alpha)
    if name is EstimatorName.INTERACTED_OLS:
        return interacted_ols(data, spec.degree, alpha)
    if name is EstimatorName.PL_SPLINE:
        return pl_spline(data, spec.spline_degree, spec.knots, alpha)
    if data.w is None:
        raise PreconditionError("iv needs an instrument column")
    return iv_ape(data.w, data.x, data.y, alpha)
