"""
Identification diagnostics: moment ladder checks, weight decompositions,
Yitzhaki weights and IV moment-condition verifiers.
"""
import logging
from math import comb
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import gaussian_kde, norm

from app.models.errors import DegenerateError, ParameterError, RangeError, ShapeError, SizeError
from app.models.schemas import (
    DgpSpec,
    IvCheck,
    IvDgpSpec,
    IvMomentReport,
    MomentProfile,
    SyntheticDraw,
    WeightRow,
    WeightTable,
)
from app.services.simulation import draw, draw_iv
from app.utils.helpers import derive_seed, make_rng

logger = logging.getLogger(__name__)


def sample_moments(values: np.ndarray, max_order: int) -> np.ndarray:
    """Raw sample moments ``E_n[v^p]`` for ``p = 0..max_order``."""
    powers = np.ones_like(values)
    out = np.empty(max_order + 1)
    for p in range(max_order + 1):
        out[p] = powers.mean()
        powers = powers * values
    return out


def _ladder(m: np.ndarray) -> np.ndarray:
    p = np.arange(m.size - 2)
    return m[p + 2] / ((p + 1) * m[2]) - m[p]


def _check_series(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(values)):
        raise ParameterError(f"{name} contains non-finite values")
    if values.size < 2 or np.ptp(values) == 0:
        raise DegenerateError(f"{name} has zero variance")
    return values


# ============ Moment ladder ============

def moment_profile(
    nu_hat: np.ndarray,
    max_order: int,
    boot_reps: int,
    seed: int,
    z_threshold: float = 2.0,
) -> MomentProfile:
    """
    Sample moments of ν̂ and the deviations ``E[ν^(p+2)]/((p+1)E[ν²]) - E[ν^p]``.

    Deviations are flagged when they exceed ``z_threshold`` bootstrap SEs.
    """
    if max_order < 3:
        raise ParameterError(f"max_order must be >= 3, got {max_order}")
    if boot_reps < 2:
        raise ParameterError(f"boot_reps must be >= 2, got {boot_reps}")
    nu = np.asarray(nu_hat, dtype=np.float64)
    if nu.size < 30:
        raise SizeError(f"moment_profile needs n >= 30, got {nu.size}")
    nu = _check_series(nu, "nu_hat")

    moments = sample_moments(nu, max_order)
    deviations = _ladder(moments)
    boot = np.empty((boot_reps, deviations.size))
    for b in range(boot_reps):
        idx = make_rng(derive_seed(seed, b)).integers(0, nu.size, nu.size)
        boot[b] = _ladder(sample_moments(nu[idx], max_order))
    std_errors = boot.std(axis=0, ddof=1)

    flags = [bool(abs(d) > z_threshold * s) for d, s in zip(deviations, std_errors)]
    return MomentProfile(
        moments=moments,
        deviations=deviations,
        std_errors=std_errors,
        flags=flags,
        n=nu.size,
        z_threshold=z_threshold,
    )


def _ladder_weights(values: np.ndarray, max_p: int, undefined_z: float) -> np.ndarray:
    """``(m_{p+2} - m_1 m_{p+1}) / ((p+1) Var m_p)``; NaN where ``m_p`` is indistinguishable from 0."""
    n = values.size
    m = sample_moments(values, max_p + 2)
    var = m[2] - m[1] ** 2
    if not var > 0:
        raise DegenerateError("zero variance")
    out = np.empty(max_p + 1)
    powers = np.ones_like(values)
    for p in range(max_p + 1):
        se_mp = powers.std() / np.sqrt(n)
        if abs(m[p]) < undefined_z * se_mp:
            out[p] = np.nan
        else:
            out[p] = (m[p + 2] - m[1] * m[p + 1]) / ((p + 1) * var * m[p])
        powers = powers * values
    return out


def empirical_weights(nu_hat: np.ndarray, max_p: int, undefined_z: float = 3.0) -> np.ndarray:
    """Sample weights applied to each order-p APE component; NaN marks undefined entries."""
    if max_p < 0:
        raise ParameterError(f"max_p must be >= 0, got {max_p}")
    return _ladder_weights(_check_series(nu_hat, "nu_hat"), max_p, undefined_z)


def ols_taylor_weights(x: np.ndarray, max_m: int, undefined_z: float = 3.0) -> np.ndarray:
    """Weights OLS of Y on X applies to the order-m Taylor APE terms, ``m = 1..max_m``."""
    if max_m < 1:
        raise ParameterError(f"max_m must be >= 1, got {max_m}")
    return _ladder_weights(_check_series(x, "x"), max_m - 1, undefined_z)


# ============ Weight decomposition ============

def decompose_draw(sample: SyntheticDraw, undefined_z: float = 3.0) -> WeightTable:
    """
    Split ``Cov(ν, Y)/Var(ν)`` into per-(m, p) APE components times weights.

    ``ape_component = m E_n[r^(m-1-p) g_m] E_n[ν^p]`` uses independence of ν and Z;
    ``component_direct`` is the joint sample mean ``m E_n[r^(m-1-p) ν^p g_m]``.
    A weight is NaN when ``E_n[ν^p]`` is within ``undefined_z`` standard errors of 0;
    the reconstruction uses the product ``component * weight``, where ``E_n[ν^p]`` cancels.
    """
    nu, r, g = sample.nu_true, sample.r_of_z, sample.g_components
    order = g.shape[1] - 1
    nu = _check_series(nu, "nu")
    m_nu = sample_moments(nu, order + 1)
    var = m_nu[2] - m_nu[1] ** 2
    weights = _ladder_weights(nu, order - 1, undefined_z)

    rows: List[WeightRow] = []
    reconstructed = 0.0
    for m in range(1, order + 1):
        for p in range(m):
            r_part = r ** (m - 1 - p) * g[:, m]
            component = m * float(r_part.mean()) * m_nu[p]
            direct = m * float(np.mean(r_part * nu**p))
            weighted = m * float(r_part.mean()) * (m_nu[p + 2] - m_nu[1] * m_nu[p + 1]) / ((p + 1) * var)
            binom = comb(m - 1, p)
            reconstructed += binom * weighted
            rows.append(WeightRow(
                m=m, p=p, binom=binom, weight=float(weights[p]),
                ape_component=component, component_direct=direct,
            ))

    y = sample.dataset.y
    direct_beta = float(np.mean((nu - nu.mean()) * (y - y.mean())) / var)
    return WeightTable(
        rows=rows,
        reconstructed_beta=float(reconstructed),
        direct_beta=direct_beta,
        sample_ape=float(sample.ape_contrib.mean()),
    )


def weight_decomposition(spec: DgpSpec, n: int, seed: int) -> WeightTable:
    """Draw ``n`` rows from ``spec`` and decompose the R-OLS estimand."""
    return decompose_draw(draw(spec.model_copy(update={"n": n}), seed))


# ============ Yitzhaki weights ============

def yitzhaki_weights(x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """
    ``ω(g) = (E[X|X>=g] - E[X|X<g]) P(X>=g) P(X<g) / f(g)`` at each grid point.

    ``f`` is a Gaussian KDE with Silverman's bandwidth.
    """
    x = np.asarray(x, dtype=np.float64)
    grid = np.atleast_1d(np.asarray(grid, dtype=np.float64))
    if x.size < 100:
        raise SizeError(f"yitzhaki_weights needs n >= 100, got {x.size}")
    lo, hi = x.min(), x.max()
    outside = grid[(grid <= lo) | (grid >= hi)]
    if outside.size:
        raise RangeError(f"grid point {outside[0]} not strictly inside the sample range [{lo}, {hi}]")

    xs = np.sort(x)
    csum = np.concatenate([[0.0], np.cumsum(xs)])
    below = np.searchsorted(xs, grid, side="left")
    above = x.size - below
    mean_below = csum[below] / below
    mean_above = (csum[-1] - csum[below]) / above
    p_below = below / x.size
    density = gaussian_kde(x, bw_method="silverman")(grid)
    return (mean_above - mean_below) * p_below * (1.0 - p_below) / density


def yitzhaki_orthogonality(x: np.ndarray, derivative: np.ndarray, grid_points: int = 199) -> float:
    """Sample covariance of the mean-normalised ω(X_i) with a derivative series."""
    x = np.asarray(x, dtype=np.float64)
    derivative = np.asarray(derivative, dtype=np.float64)
    if derivative.shape != x.shape:
        raise ShapeError("x and derivative must have equal length")
    grid = np.unique(np.quantile(x, np.linspace(0.0, 1.0, grid_points + 2)[1:-1]))
    omega = np.interp(x, grid, yitzhaki_weights(x, grid))
    omega = omega / omega.mean()
    return float(np.mean((omega - 1.0) * (derivative - derivative.mean())))


# ============ IV moment conditions ============

def _quartile_bins(values: np.ndarray) -> np.ndarray:
    edges = np.quantile(values, [0.25, 0.5, 0.75])
    return np.searchsorted(edges, values, side="right")


def _iv_statistics(
    idx: np.ndarray,
    w: np.ndarray,
    zeta: np.ndarray,
    r: np.ndarray,
    g: np.ndarray,
    bins: List[Tuple[str, np.ndarray]],
    m_max: int,
) -> np.ndarray:
    w, zeta, r, g = w[idx], zeta[idx], r[idx], g[idx]
    w = w - w.mean()
    stats: List[float] = []
    for m in range(1, min(m_max, g.shape[1] - 1) + 1):
        stats.append(float(np.mean(w * zeta**m * g[:, m])))
    denom_base = float(np.mean(w * r))
    for p in range(m_max):
        values = w * r ** (p + 1) / ((p + 1) * denom_base) - r**p
        stats.append(float(values.mean()))
        for _, labels in bins:
            labels = labels[idx]
            for q in range(4):
                stats.append(float(values[labels == q].mean()))
    return np.asarray(stats)


def iv_moment_check(
    spec: IvDgpSpec,
    m_max: int,
    n: int,
    seed: int,
    boot_reps: int = 100,
    z_threshold: float = 2.0,
) -> IvMomentReport:
    """
    Monte Carlo check of the IV moment conditions on a synthetic IV design.

    IV_MC1: ``E[W ζ^m g_m(Z)] = 0``. IV_MC2:
    ``E[W r^(p+1) / ((p+1) E[W r]) - r^p | ζ, Z] = 0``, checked unconditionally and
    within quartile bins of ζ and of every control. Each check passes when it lies
    within the Bonferroni-adjusted critical value (family size = number of checks,
    per-check level implied by ``z_threshold``) times its bootstrap SE.
    """
    if m_max < 1:
        raise ParameterError(f"m_max must be >= 1, got {m_max}")
    if boot_reps < 2:
        raise ParameterError(f"boot_reps must be >= 2, got {boot_reps}")
    sample = draw_iv(spec.model_copy(update={"n": n}), seed)
    _check_series(sample.w, "instrument")

    z = sample.dataset.z
    bins = [("zeta", _quartile_bins(sample.zeta))]
    bins += [(f"z{k + 1}", _quartile_bins(z[:, k])) for k in range(z.shape[1])]
    args = (sample.w, sample.zeta, sample.r_of_wz, sample.g_components, bins, m_max)

    estimates = _iv_statistics(np.arange(n), *args)
    boot = np.empty((boot_reps, estimates.size))
    for b in range(boot_reps):
        idx = make_rng(derive_seed(seed, 1, b)).integers(0, n, n)
        boot[b] = _iv_statistics(idx, *args)
    std_errors = boot.std(axis=0, ddof=1)

    alpha = 2.0 * norm.sf(z_threshold)
    critical = float(norm.isf(alpha / (2.0 * estimates.size)))

    labels: List[Tuple[str, Optional[int], Optional[int], str]] = []
    for m in range(1, min(m_max, sample.g_components.shape[1] - 1) + 1):
        labels.append(("IV_MC1", m, None, "unconditional"))
    for p in range(m_max):
        labels.append(("IV_MC2", None, p, "unconditional"))
        for name, _ in bins:
            labels.extend(("IV_MC2", None, p, f"{name}_q{q + 1}") for q in range(4))

    checks = [
        IvCheck(
            family=family, m=m, p=p, condition=condition,
            estimate=float(est), std_error=float(se),
            passed=bool(abs(est) <= critical * se + 1e-12),
        )
        for (family, m, p, condition), est, se in zip(labels, estimates, std_errors)
    ]
    mc1 = all(c.passed for c in checks if c.family == "IV_MC1")
    mc2 = all(c.passed for c in checks if c.family == "IV_MC2")
    logger.info("IV moment check %s: MC1=%s MC2=%s", spec.scenario(), mc1, mc2)
    return IvMomentReport(
        scenario=spec.scenario(),
        checks=checks,
        critical_value=critical,
        mc1_satisfied=mc1,
        mc2_satisfied=mc2,
        satisfied=mc1 and mc2,
    )
