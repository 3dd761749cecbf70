"""
Dense least-squares kernel: pivoted-QR solving, sandwich covariance and design builders.
"""
import logging
from itertools import combinations_with_replacement
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import qr, solve_triangular

from app.models.errors import KnotError, ParameterError, PreconditionError, ShapeError, SingularityError
from app.models.schemas import DesignMatrix, LeastSquaresFit, SandwichCovariance

logger = logging.getLogger(__name__)


class _Factor(NamedTuple):
    q_mat: np.ndarray
    r_mat: np.ndarray
    piv: np.ndarray
    scale: np.ndarray


def _factorize(design: DesignMatrix) -> _Factor:
    """Pivoted QR of the column-equilibrated design; raises on rank deficiency."""
    values = design.values
    n, q = values.shape
    if q == 0:
        raise ShapeError("design has no columns")
    scale = np.linalg.norm(values, axis=0)
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        label = design.column_labels[zero[0]]
        raise SingularityError(f"design column '{label}' is identically zero", column=label)

    q_mat, r_mat, piv = qr(values / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    tol = max(n, q) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < q:
        label = design.column_labels[piv[rank]]
        logger.debug("pivoted QR diagonal: %s (tol %.3g)", diag, tol)
        raise SingularityError(
            f"design is rank deficient (rank {rank} < {q}); column '{label}' is linearly dependent",
            column=label,
        )
    return _Factor(q_mat, r_mat, piv, scale)


def _unpermute(cov_p: np.ndarray, factor: _Factor) -> np.ndarray:
    q = cov_p.shape[0]
    cov = np.empty((q, q))
    cov[np.ix_(factor.piv, factor.piv)] = cov_p
    cov /= np.outer(factor.scale, factor.scale)
    return 0.5 * (cov + cov.T)


def solve_ls(design: DesignMatrix, y: np.ndarray) -> LeastSquaresFit:
    """
    Least squares of ``y`` on ``design`` via column-pivoted QR.

    Columns are scaled to unit norm before factorizing; a diagonal entry of R below
    ``max(n, q) * eps * |R[0, 0]|`` marks the pivoted column as dependent.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (design.n,):
        raise ShapeError(f"y has shape {y.shape}, design has {design.n} rows")
    factor = _factorize(design)

    coef_p = solve_triangular(factor.r_mat, factor.q_mat.T @ y)
    coef = np.empty(design.q)
    coef[factor.piv] = coef_p
    coef /= factor.scale

    fitted = design.values @ coef
    return LeastSquaresFit(coefficients=coef, residuals=y - fitted, fitted=fitted, rank=design.q)


def sandwich_variance(design: DesignMatrix, fit: LeastSquaresFit, hc1: bool = False) -> SandwichCovariance:
    """
    Heteroskedasticity-robust coefficient covariance.

    ``(Ω'Ω)^-1 (Σ Ω_i Ω_i' U_i²) (Ω'Ω)^-1``; with ``hc1`` scaled by ``n / (n - q)``.
    """
    n, q = design.n, design.q
    if n <= q:
        raise PreconditionError(f"sandwich variance needs n > q, got n={n}, q={q}")
    if fit.residuals.shape != (n,):
        raise ShapeError("fit does not belong to this design")
    factor = _factorize(design)

    r_inv = solve_triangular(factor.r_mat, np.eye(q))
    scores = factor.q_mat * fit.residuals[:, None]
    cov_p = r_inv @ (scores.T @ scores) @ r_inv.T
    if hc1:
        cov_p *= n / (n - q)
    return SandwichCovariance(matrix=_unpermute(cov_p, factor), df_note="HC1" if hc1 else "HC0")


def classical_variance(design: DesignMatrix, fit: LeastSquaresFit) -> SandwichCovariance:
    """Homoskedastic covariance ``σ² (Ω'Ω)^-1`` with ``σ² = Σ U² / (n - q)``."""
    n, q = design.n, design.q
    if n <= q:
        raise PreconditionError(f"classical variance needs n > q, got n={n}, q={q}")
    factor = _factorize(design)
    r_inv = solve_triangular(factor.r_mat, np.eye(q))
    sigma2 = float(fit.residuals @ fit.residuals) / (n - q)
    return SandwichCovariance(matrix=_unpermute(sigma2 * (r_inv @ r_inv.T), factor), df_note="classical")


def stack_design(columns: Dict[str, np.ndarray]) -> DesignMatrix:
    """Design from an ordered ``{label: column}`` mapping."""
    labels = list(columns)
    return DesignMatrix(values=np.column_stack([columns[k] for k in labels]), column_labels=labels)


# ============ Polynomial designs ============

def monomial_exponents(n_vars: int, degree: int) -> List[Tuple[int, ...]]:
    """Exponent tuples of all monomials of total degree <= ``degree``, graded order."""
    exponents = []
    for total in range(degree + 1):
        for combo in combinations_with_replacement(range(n_vars), total):
            exponents.append(tuple(combo.count(v) for v in range(n_vars)))
    return exponents


def _monomial_label(exps: Sequence[int], names: Sequence[str]) -> str:
    parts = [name if e == 1 else f"{name}^{e}" for name, e in zip(names, exps) if e]
    return "*".join(parts) or "1"


def monomial_design(variables: np.ndarray, degree: int, names: Sequence[str]) -> DesignMatrix:
    """All monomials of the columns of ``variables`` up to total ``degree``."""
    if degree < 1:
        raise ParameterError(f"polynomial degree must be >= 1, got {degree}")
    variables = np.asarray(variables, dtype=np.float64)
    exponents = monomial_exponents(variables.shape[1], degree)

    values = np.empty((variables.shape[0], len(exponents)), order="F")
    for j, exps in enumerate(exponents):
        values[:, j] = np.prod(variables ** np.asarray(exps), axis=1)
    labels = [_monomial_label(e, names) for e in exponents]
    return DesignMatrix(values=values, column_labels=labels, exponents=exponents)


def polynomial_design(x: np.ndarray, z: np.ndarray, degree: int) -> DesignMatrix:
    """
    All monomials ``x^a prod z_k^b_k`` with ``a + sum b_k <= degree``, intercept included.

    The column count is ``C(degree + v, v)`` for ``v = K + 1`` variables.
    """
    z = np.asarray(z, dtype=np.float64).reshape(len(x), -1)
    variables = np.column_stack([np.asarray(x, dtype=np.float64), z])
    names = ["x"] + [f"z{k + 1}" for k in range(z.shape[1])]
    return monomial_design(variables, degree, names)


def polynomial_x_derivative(x: np.ndarray, z: np.ndarray, design: DesignMatrix) -> np.ndarray:
    """Row-wise ``∂(monomial)/∂x`` for every column of a polynomial design."""
    if design.exponents is None:
        raise PreconditionError("design carries no monomial exponents")
    z = np.asarray(z, dtype=np.float64).reshape(len(x), -1)
    variables = np.column_stack([np.asarray(x, dtype=np.float64), z])
    out = np.zeros((variables.shape[0], design.q))
    for j, exps in enumerate(design.exponents):
        a = exps[0]
        if a == 0:
            continue
        lowered = np.asarray(exps)
        lowered[0] = a - 1
        out[:, j] = a * np.prod(variables ** lowered, axis=1)
    return out


# ============ B-spline designs ============

def spline_knots(values: np.ndarray, degree: int, knots: int) -> np.ndarray:
    """Clamped knot vector with ``knots`` interior knots at empirical quantiles."""
    values = np.asarray(values, dtype=np.float64)
    if np.unique(values).size < knots:
        raise KnotError(f"{np.unique(values).size} distinct values cannot support {knots} knots")
    lo, hi = float(values.min()), float(values.max())
    interior = np.quantile(values, np.linspace(0.0, 1.0, knots + 2)[1:-1])
    breaks = np.concatenate([[lo], interior, [hi]])
    if np.any(np.diff(breaks) <= 0):
        raise KnotError("quantile knots are not strictly increasing (too many ties)")
    return np.concatenate([np.repeat(lo, degree + 1), interior, np.repeat(hi, degree + 1)])


def bspline_basis(values: np.ndarray, knot_vector: np.ndarray, degree: int) -> np.ndarray:
    """Full B-spline basis (``len(t) - degree - 1`` columns); inputs clipped to the knot span."""
    lo, hi = knot_vector[degree], knot_vector[-degree - 1]
    clipped = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    return BSpline.design_matrix(clipped, knot_vector, degree).toarray()


class AdditiveSplineBasis:
    """
    Per-column B-spline bases with one shared intercept.

    The first basis function of every column is dropped to identify the intercept.
    """

    def __init__(self, degree: int = 3, knots: int = 5):
        if degree < 1:
            raise ParameterError(f"spline degree must be >= 1, got {degree}")
        if knots < 2:
            raise ParameterError(f"need at least 2 interior knots, got {knots}")
        self.degree = degree
        self.knots = knots
        self.knot_vectors: Optional[List[np.ndarray]] = None

    def fit(self, z: np.ndarray) -> "AdditiveSplineBasis":
        z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
        self.knot_vectors = [spline_knots(z[:, k], self.degree, self.knots) for k in range(z.shape[1])]
        return self

    def transform(self, z: np.ndarray, prefix: str = "z") -> DesignMatrix:
        if self.knot_vectors is None:
            raise PreconditionError("spline basis used before fit")
        z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
        if z.shape[1] != len(self.knot_vectors):
            raise ShapeError(f"expected {len(self.knot_vectors)} columns, got {z.shape[1]}")

        blocks = [np.ones((z.shape[0], 1))]
        labels = ["1"]
        for k, t in enumerate(self.knot_vectors):
            basis = bspline_basis(z[:, k], t, self.degree)[:, 1:]
            blocks.append(basis)
            labels.extend(f"bs({prefix}{k + 1})_{j + 1}" for j in range(basis.shape[1]))
        return DesignMatrix(values=np.hstack(blocks), column_labels=labels)


def bspline_design(z: np.ndarray, spline_degree: int = 3, knots: int = 5) -> DesignMatrix:
    """Additive B-spline design on ``z`` with knots at its own quantiles."""
    return AdditiveSplineBasis(spline_degree, knots).fit(z).transform(z)
