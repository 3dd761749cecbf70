"""
Tests for the row bootstrap
"""
import numpy as np
import pytest

from app.models.errors import BootstrapError, DegenerateError, ParameterError
from app.models.schemas import BootstrapMethod, Dataset, EstimatorName, EstimatorSpec
from app.services.inference import bootstrap
from app.utils.helpers import derive_seed


def mean_of_y(data, seed):
    return float(data.y.mean())


def _sample(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(y=rng.standard_normal(n), x=rng.standard_normal(n))


class TestBootstrap:
    """Resampling, intervals and failure accounting."""

    def test_mean_standard_error(self):
        data = _sample()
        result = bootstrap(data, mean_of_y, B=500, seed=1)
        assert result.se == pytest.approx(1.0 / np.sqrt(data.n), rel=0.15)
        assert result.estimates.size == 500
        assert result.ci_low < result.point < result.ci_high

    def test_normal_interval_is_symmetric(self):
        result = bootstrap(_sample(500), mean_of_y, B=100, seed=2, method=BootstrapMethod.NORMAL_APPROX)
        assert result.point - result.ci_low == pytest.approx(result.ci_high - result.point)

    def test_deterministic_for_a_seed(self):
        data = _sample(300)
        first = bootstrap(data, mean_of_y, B=60, seed=3)
        second = bootstrap(data, mean_of_y, B=60, seed=3)
        np.testing.assert_array_equal(first.estimates, second.estimates)

    def test_workers_do_not_change_results(self):
        data = _sample(300)
        serial = bootstrap(data, mean_of_y, B=60, seed=4, workers=1)
        parallel = bootstrap(data, mean_of_y, B=60, seed=4, workers=2)
        np.testing.assert_array_equal(serial.estimates, parallel.estimates)

    def test_accepts_estimator_spec(self, additive_draw):
        spec = EstimatorSpec(name=EstimatorName.ROLS_KNOWN)
        result = bootstrap(additive_draw.dataset, spec, B=50, seed=5)
        assert result.point == pytest.approx(1.0, abs=0.1)
        assert result.se > 0

    @pytest.mark.parametrize("kwargs", [{"B": 10}, {"alpha": 0.0}, {"alpha": 1.5}])
    def test_parameter_errors(self, kwargs):
        with pytest.raises(ParameterError):
            bootstrap(_sample(100), mean_of_y, **kwargs)

    def test_failed_resample_is_retried(self):
        bad_seed = derive_seed(6, 3)

        def flaky(data, seed):
            if seed == bad_seed:
                raise DegenerateError("unlucky resample")
            return float(data.y.mean())

        result = bootstrap(_sample(200), flaky, B=50, seed=6, point=0.0)
        assert result.retried == 1
        assert result.skipped == 0

    def test_persistent_failures_raise(self):
        def broken(data, seed):
            raise DegenerateError("always")

        with pytest.raises(BootstrapError):
            bootstrap(_sample(100), broken, B=50, point=0.0)
