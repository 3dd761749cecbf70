"""
Tests for error laws, analytic moments and the moment ladder
"""
import numpy as np
import pytest
from scipy.integrate import quad

from app.models.errors import ParameterError
from app.models.schemas import UMIX_AUTO, ErrorDistribution, ErrorKind
from app.services.distributions import analytic_moment, assumption2_deviation, kurtosis, moments, sample


class TestParsing:
    """Distribution spec strings."""

    @pytest.mark.parametrize("text,kind", [
        ("normal(0,1)", ErrorKind.NORMAL),
        ("gmix(0.9)", ErrorKind.GAUSSIAN_MIXTURE),
        ("umix(auto)", ErrorKind.UNIFORM_MIXTURE),
        ("uniform(-1,2)", ErrorKind.UNIFORM),
    ])
    def test_parse(self, text, kind):
        assert ErrorDistribution.parse(text).kind is kind

    def test_str_round_trips(self):
        for dist in (ErrorDistribution.normal(), ErrorDistribution.gmix(0.9), ErrorDistribution.umix()):
            assert ErrorDistribution.parse(str(dist)) == dist
        assert str(ErrorDistribution.umix()) == "umix(auto)"

    def test_unknown_name(self):
        with pytest.raises(ParameterError):
            ErrorDistribution.parse("cauchy(0,1)")


class TestAnalyticMoments:
    """Closed-form raw moments."""

    def test_standard_normal(self):
        np.testing.assert_allclose(moments(ErrorDistribution.normal(), 8), [1, 0, 1, 0, 3, 0, 15, 0, 105])

    def test_gaussian_mixture_fourth_moment(self):
        assert analytic_moment(ErrorDistribution.gmix(0.9), 4) == pytest.approx(1.6878, abs=1e-12)
        assert analytic_moment(ErrorDistribution.gmix(0.9), 2) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("order", range(9))
    def test_uniform_matches_quadrature(self, order):
        dist = ErrorDistribution.uniform(-1.0, 2.0)
        expected, _ = quad(lambda v: v**order / 3.0, -1.0, 2.0)
        assert analytic_moment(dist, order) == pytest.approx(expected, rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("order", range(9))
    def test_normal_matches_quadrature(self, order):
        dist = ErrorDistribution.normal(0.5, 1.5)
        density = lambda v: np.exp(-0.5 * ((v - 0.5) / 1.5) ** 2) / (1.5 * np.sqrt(2 * np.pi))
        expected, _ = quad(lambda v: v**order * density(v), -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12)
        assert analytic_moment(dist, order) == pytest.approx(expected, rel=1e-7)

    def test_uniform_mixture_is_mesokurtic(self):
        assert kurtosis(ErrorDistribution.umix(UMIX_AUTO)) == pytest.approx(3.0, abs=1e-9)
        assert kurtosis(ErrorDistribution.normal()) == pytest.approx(3.0, abs=1e-12)


class TestAssumptionLadder:
    """``E[ν^(p+2)] = (p+1) E[ν²] E[ν^p]``."""

    def test_normal_is_exactly_zero(self):
        deviations = assumption2_deviation(ErrorDistribution.normal(), 9)
        np.testing.assert_array_equal(deviations, np.zeros(9))

    def test_gaussian_mixture_breaks_order_two(self):
        deviations = assumption2_deviation(ErrorDistribution.gmix(0.9), 3)
        assert deviations[0] == pytest.approx(0.0, abs=1e-12)
        assert deviations[1] == pytest.approx(0.0, abs=1e-12)
        assert deviations[2] == pytest.approx(1.6878 / 3 - 1.0, abs=1e-12)

    def test_uniform_mixture_passes_order_two_only_by_kurtosis(self):
        deviations = assumption2_deviation(ErrorDistribution.umix(), 3)
        assert deviations[2] == pytest.approx(0.0, abs=1e-9)


class TestSampling:
    """Philox-backed samplers."""

    def test_deterministic(self):
        dist = ErrorDistribution.gmix(0.9)
        np.testing.assert_array_equal(sample(dist, 100, 3), sample(dist, 100, 3))

    @pytest.mark.parametrize("dist", [
        ErrorDistribution.normal(),
        ErrorDistribution.gmix(0.9),
        ErrorDistribution.umix(),
        ErrorDistribution.uniform(-1.0, 1.0),
    ])
    def test_sample_moments_match(self, dist):
        draws = sample(dist, 400_000, 17)
        assert draws.mean() == pytest.approx(analytic_moment(dist, 1), abs=0.01)
        assert np.mean(draws**2) == pytest.approx(analytic_moment(dist, 2), rel=0.02)

    def test_size_must_be_positive(self):
        with pytest.raises(ParameterError):
            sample(ErrorDistribution.normal(), 0, 1)
