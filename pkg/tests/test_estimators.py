"""
Tests for the APE estimators
"""
import numpy as np
import pytest

from app.models.errors import DegenerateError, ParameterError, PreconditionError, ShapeError, SizeError
from app.models.schemas import (
    Dataset,
    DgpSpec,
    EstimatorName,
    EstimatorSpec,
    Family,
    GFamily,
    IvDgpSpec,
    LearnerKind,
    LearnerSpec,
    Method,
    RForm,
)
from app.services.estimators import (
    dml_plr,
    interacted_ols,
    iv_ape,
    ols_fwl,
    pl_spline,
    plr_from_residuals,
    rols,
    rols_ml,
    run_estimator,
    simple_ols,
)
from app.services.inference import bootstrap
from app.services.simulation import FIG1_SPEC, draw, draw_iv

POLY2 = LearnerSpec(kind=LearnerKind.POLY_RIDGE, degree=2)


class TestRols:
    """Residualised-treatment ratio."""

    def test_exact_formula(self):
        nu = np.array([1.0, -2.0, 0.5, 3.0])
        y = np.array([2.0, 1.0, -1.0, 4.0])
        result = rols(nu, y)
        point = nu @ y / (nu @ nu)
        se = np.sqrt(np.sum((nu * (y - point * nu)) ** 2)) / (nu @ nu)
        assert result.point == pytest.approx(point, rel=1e-14)
        assert result.std_error == pytest.approx(se, rel=1e-12)
        assert result.method is Method.ROLS_KNOWN_NU
        assert result.ci_low < result.point < result.ci_high

    def test_center_nu_is_cov_over_var(self):
        rng = np.random.default_rng(0)
        nu = 2.0 + rng.standard_normal(500)
        y = 3.0 * nu + rng.standard_normal(500)
        centred = rols(nu, y, center_nu=True)
        expected = np.cov(nu, y, bias=True)[0, 1] / np.var(nu)
        assert centred.point == pytest.approx(expected, rel=1e-12)

    def test_zero_error_is_degenerate(self):
        with pytest.raises(DegenerateError):
            rols(np.zeros(5), np.arange(5.0))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            rols(np.ones(5), np.ones(4))

    def test_single_observation(self):
        with pytest.raises(SizeError):
            rols(np.ones(1), np.ones(1))

    def test_known_nu_recovers_additive_ape(self, additive_draw):
        data = additive_draw.dataset
        result = rols(data.nu_known, data.y)
        assert abs(result.point - 1.0) < 4 * result.std_error

    def test_scale_equivariance(self, simple_draw):
        data = simple_draw.dataset
        base = rols(data.nu_known, data.y)
        scaled_y = rols(data.nu_known, 3.0 * data.y)
        assert scaled_y.point == pytest.approx(3.0 * base.point, rel=1e-12)
        assert scaled_y.std_error == pytest.approx(3.0 * base.std_error, rel=1e-12)
        scaled_nu = rols(2.5 * data.nu_known, data.y)
        assert scaled_nu.point == pytest.approx(base.point / 2.5, rel=1e-12)
        assert scaled_nu.std_error == pytest.approx(base.std_error / 2.5, rel=1e-12)


class TestOlsFwl:
    """Frisch-Waugh-Lovell identity."""

    @pytest.mark.parametrize("seed", range(100))
    def test_fwl_equals_rols_on_residualised_treatment(self, seed):
        rng = np.random.default_rng(seed)
        n = 60
        z = rng.standard_normal((n, 2))
        r = np.sin(z[:, 0]) + z[:, 1] ** 2
        x = r + rng.standard_normal(n)
        y = 1.5 * x + z[:, 0] + rng.standard_normal(n)
        data = Dataset(y=y, x=x, z=z)
        fwl = ols_fwl(data, r)

        partner = np.column_stack([r, np.ones(n)])
        project = lambda v: v - partner @ np.linalg.lstsq(partner, v, rcond=None)[0]
        x_tilde, y_tilde = project(x), project(y)
        assert fwl.point == pytest.approx(x_tilde @ y_tilde / (x_tilde @ x_tilde), rel=1e-10, abs=1e-10)

    def test_accepts_callable(self, simple_draw):
        data = simple_draw.dataset
        direct = ols_fwl(data, simple_draw.r_of_z)
        via_callable = ols_fwl(data, lambda z: z[:, 0] * z[:, 1])
        assert direct.point == pytest.approx(via_callable.point, rel=1e-12)

    def test_wrong_length(self, simple_draw):
        with pytest.raises(ShapeError):
            ols_fwl(simple_draw.dataset, np.ones(3))


class TestRegressionBaselines:
    """Simple OLS, interacted OLS and the partially linear spline."""

    def test_simple_ols_on_linear_design(self, additive_draw):
        result = simple_ols(additive_draw.dataset)
        assert result.method is Method.SIMPLE_OLS
        assert abs(result.point - 1.0) < 4 * result.std_error

    def test_interacted_ols_exact_on_polynomial(self):
        rng = np.random.default_rng(1)
        n = 400
        z = rng.standard_normal((n, 2))
        x = z[:, 0] + rng.standard_normal(n)
        y = 2.0 * x + x**2 * z[:, 1] + x * z[:, 0] - z[:, 1] ** 3
        result = interacted_ols(Dataset(y=y, x=x, z=z), degree=3)
        expected = np.mean(2.0 + 2.0 * x * z[:, 1] + z[:, 0])
        assert result.point == pytest.approx(expected, rel=1e-8)
        assert result.std_error == pytest.approx(0.0, abs=1e-6)
        assert result.diagnostics["columns"] == 20

    def test_interacted_ols_delta_se_matches_bootstrap(self):
        data = draw(DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE, M=1, n=2000), seed=7).dataset
        analytic = interacted_ols(data, degree=3)
        boot = bootstrap(data, lambda sample, seed: interacted_ols(sample, degree=3), B=500, seed=9)
        assert boot.se == pytest.approx(analytic.std_error, rel=0.25)

    def test_pl_spline_partially_linear(self, plr_data):
        result = pl_spline(plr_data, spline_degree=3, knots=5)
        assert result.method is Method.PL_SPLINE
        assert abs(result.point - 0.5) < 4 * result.std_error

    def test_pl_spline_needs_controls(self):
        with pytest.raises(PreconditionError):
            pl_spline(Dataset(y=np.arange(30.0), x=np.sin(np.arange(30.0))))


class TestDoubleML:
    """Partialling-out estimator."""

    def test_recovers_plr_coefficient(self, plr_data):
        spec = LearnerSpec(kind=LearnerKind.POLY_RIDGE, degree=3)
        result = dml_plr(plr_data, POLY2, spec, folds=5, seed=4)
        assert result.method is Method.DML_PLR
        assert abs(result.point - 0.5) < 4 * result.std_error
        assert {"rmse_r", "rmse_l", "corr_nu_z_max"} <= set(result.diagnostics)

    def test_influence_function_se(self):
        rng = np.random.default_rng(2)
        nu = rng.standard_normal(200)
        u = 0.7 * nu + rng.standard_normal(200)
        result = plr_from_residuals(nu, u)
        theta = nu @ u / (nu @ nu)
        psi = (u - theta * nu) * nu
        assert result.std_error == pytest.approx(np.sqrt(np.mean(psi**2) / np.mean(nu**2) ** 2 / 200), rel=1e-12)

    def test_robust_to_misestimated_treatment_error(self):
        data = draw(FIG1_SPEC.model_copy(update={"n": 100_000}), seed=12)
        z = data.dataset.z[:, 0]
        r = np.exp(z)
        nu_hat = data.nu_true + 0.1 * (z - 1.0)
        l_of_z = z**3 + 2.0 * r + 2.0 * (r**2 + 1.0)
        truth = 2.0 * np.e**2

        dml = plr_from_residuals(nu_hat, data.dataset.y - l_of_z)
        naive = rols(nu_hat, data.dataset.y)
        assert abs(dml.point - truth) < 0.3
        assert naive.point - truth > 1.0

    def test_scale_equivariance(self, plr_data):
        spec_l = LearnerSpec(kind=LearnerKind.POLY_RIDGE, degree=3)
        base = dml_plr(plr_data, POLY2, spec_l, folds=4, seed=2)
        scaled = Dataset(y=4.0 * plr_data.y, x=plr_data.x, z=plr_data.z)
        result = dml_plr(scaled, POLY2, spec_l, folds=4, seed=2)
        assert result.point == pytest.approx(4.0 * base.point, rel=1e-8)
        assert result.std_error == pytest.approx(4.0 * base.std_error, rel=1e-8)

    def test_polynomial_learners_agree_with_fwl(self):
        sample = draw(DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE, M=1, n=5000), seed=6)
        learner = LearnerSpec(kind=LearnerKind.POLY_RIDGE, degree=4)
        dml = dml_plr(sample.dataset, learner, learner, folds=5, seed=1)
        fwl = ols_fwl(sample.dataset, sample.r_of_z)
        assert abs(dml.point - fwl.point) < 2 * fwl.std_error

    def test_nuisance_learners_are_seeded_apart(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((300, 1))
        x = z[:, 0] + rng.standard_normal(300)
        mlp = LearnerSpec(kind=LearnerKind.MLP, layers=1, width=8, epochs=5)
        # identical targets and learners, so only the seeds separate the two residual sets
        result = dml_plr(Dataset(y=x.copy(), x=x, z=z), mlp, mlp, folds=3, seed=0)
        assert result.point != 1.0
        assert result.std_error > 0

    def test_rols_ml_reports_nuisance_quality(self, plr_data):
        result = rols_ml(plr_data, POLY2, folds=3, seed=0)
        assert result.method is Method.ROLS_ML
        assert result.diagnostics["rmse_r"] == pytest.approx(1.0, abs=0.05)


class TestInstrumentalVariables:
    """Just-identified IV ratio."""

    def test_recovers_linear_effect(self):
        rng = np.random.default_rng(3)
        n = 5000
        w = rng.standard_normal(n)
        zeta = rng.standard_normal(n)
        x = w + zeta
        y = 1.0 + 2.0 * x + 0.8 * zeta + rng.standard_normal(n)
        result = iv_ape(w, x, y)
        assert abs(result.point - 2.0) < 3 * result.std_error
        assert result.diagnostics["first_stage_corr"] == pytest.approx(np.sqrt(0.5), abs=0.03)

    def test_heterogeneous_effect_recovers_mean_slope(self):
        spec = IvDgpSpec(r_form=RForm.LINEAR, g_family=GFamily.SIMPLE, M=1, n=10_000)
        sample = draw_iv(spec, seed=5)
        result = iv_ape(sample.w, sample.dataset.x, sample.dataset.y)
        # E[g(Z)] = E[Z1 Z2] = 1 for independent N(1, 1) controls
        assert abs(result.point - 1.0) < 3 * result.std_error

    def test_constant_instrument(self):
        with pytest.raises(DegenerateError):
            iv_ape(np.ones(50), np.arange(50.0), np.arange(50.0))


class TestRunEstimator:
    """Spec dispatch and preconditions."""

    def test_parse_aliases(self):
        spec = EstimatorSpec.parse("dml_plr(learner=poly(degree=2),folds=3)", label="DML")
        assert spec.name is EstimatorName.DML
        assert spec.learner_l == spec.learner
        assert spec.label == "DML"
        assert EstimatorSpec.parse(str(spec)).learner == spec.learner

    @pytest.mark.parametrize("text", ["rols_ml", "lasso", "pl_spline(knots=many)", "rols_ml(learner=gbt,folds=1)"])
    def test_parse_rejects(self, text):
        with pytest.raises(ParameterError):
            EstimatorSpec.parse(text)

    def test_rols_known_needs_nu(self, plr_data):
        data = Dataset(y=plr_data.y, x=plr_data.x, z=plr_data.z)
        with pytest.raises(PreconditionError):
            run_estimator(EstimatorSpec(name=EstimatorName.ROLS_KNOWN), data, seed=0)

    def test_fwl_needs_treatment_form(self, plr_data):
        with pytest.raises(PreconditionError):
            run_estimator(EstimatorSpec(name=EstimatorName.OLS_FWL), plr_data, seed=0)

    def test_iv_needs_instrument(self, plr_data):
        with pytest.raises(PreconditionError):
            run_estimator(EstimatorSpec(name=EstimatorName.IV), plr_data, seed=0)

    def test_dispatch_matches_direct_call(self, simple_draw):
        data = simple_draw.dataset
        spec = EstimatorSpec.parse("interacted_ols(degree=2)")
        assert run_estimator(spec, data, seed=0).point == interacted_ols(data, degree=2).point
        known = run_estimator(EstimatorSpec.parse("rols"), data, seed=0)
        assert known.point == rols(data.nu_known, data.y).point
