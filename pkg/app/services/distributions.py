"""
Error laws with analytically known moments.
"""
from math import comb

import numpy as np

from app.models.errors import DegenerateError, ParameterError
from app.models.schemas import ErrorDistribution, ErrorKind
from app.utils.helpers import make_rng


def sample(dist: ErrorDistribution, n: int, seed: int) -> np.ndarray:
    """
    Draw ``n`` variates from ``dist``.

    Mixtures draw all component labels first, then all component variates,
    from one Philox stream.
    """
    if n < 1:
        raise ParameterError(f"sample size must be >= 1, got {n}")
    rng = make_rng(seed)

    if dist.kind is ErrorKind.NORMAL:
        return dist.mean + dist.sd * rng.standard_normal(n)
    if dist.kind is ErrorKind.GAUSSIAN_MIXTURE:
        first = rng.random(n) < 0.5
        centre = np.where(first, dist.mu, -dist.mu)
        return centre + np.sqrt(1.0 - dist.mu**2) * rng.standard_normal(n)
    if dist.kind is ErrorKind.UNIFORM_MIXTURE:
        first = rng.random(n) < 0.5
        half_width = np.where(first, 1.0, dist.a)
        return half_width * rng.uniform(-1.0, 1.0, n)
    return rng.uniform(dist.lo, dist.hi, n)


def normal_moments(mean: float, sd: float, max_order: int) -> np.ndarray:
    """Raw moments of N(mean, sd²) via ``E[X^(p+2)] = μE[X^(p+1)] + σ²(p+1)E[X^p]``."""
    m = np.zeros(max(max_order, 1) + 1)
    m[0], m[1] = 1.0, mean
    for p in range(max_order - 1):
        m[p + 2] = mean * m[p + 1] + sd**2 * (p + 1) * m[p]
    return m[: max_order + 1]


def uniform_moments(lo: float, hi: float, max_order: int) -> np.ndarray:
    p = np.arange(max_order + 1)
    return (hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * (hi - lo))


def moments(dist: ErrorDistribution, max_order: int) -> np.ndarray:
    """Raw population moments of orders ``0..max_order``."""
    if max_order < 0:
        raise ParameterError(f"moment order must be >= 0, got {max_order}")
    if dist.kind is ErrorKind.NORMAL:
        return normal_moments(dist.mean, dist.sd, max_order)
    if dist.kind is ErrorKind.GAUSSIAN_MIXTURE:
        sd = np.sqrt(1.0 - dist.mu**2)
        return 0.5 * (normal_moments(dist.mu, sd, max_order) + normal_moments(-dist.mu, sd, max_order))
    if dist.kind is ErrorKind.UNIFORM_MIXTURE:
        return 0.5 * (uniform_moments(-1.0, 1.0, max_order) + uniform_moments(-dist.a, dist.a, max_order))
    return uniform_moments(dist.lo, dist.hi, max_order)


def analytic_moment(dist: ErrorDistribution, order: int) -> float:
    """Exact ``E[ν^order]``."""
    return float(moments(dist, order)[order])


def assumption2_deviation(dist: ErrorDistribution, max_m: int) -> np.ndarray:
    """``E[ν^(p+2)] / ((p+1) E[ν²]) - E[ν^p]`` for ``p = 0..max_m-1``."""
    if max_m < 1:
        raise ParameterError(f"max_m must be >= 1, got {max_m}")
    m = moments(dist, max_m + 1)
    if m[2] == 0:
        raise DegenerateError("E[nu^2] is zero")
    p = np.arange(max_m)
    return m[p + 2] / ((p + 1) * m[2]) - m[p]


def kurtosis(dist: ErrorDistribution) -> float:
    """Central fourth moment over squared variance."""
    m = moments(dist, 4)
    mu = m[1]
    central4 = sum(comb(4, j) * m[j] * (-mu) ** (4 - j) for j in range(5))
    var = m[2] - mu**2
    return float(central4 / var**2)
