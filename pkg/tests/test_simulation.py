"""
Tests for the synthetic designs, the true-APE oracle and the Monte Carlo harness
"""
import numpy as np
import pytest

from app.models.errors import ParameterError
from app.models.schemas import (
    DgpSpec,
    ErrorDistribution,
    EstimatorName,
    EstimatorSpec,
    Family,
    Figure1Config,
    Figure1Record,
    GridConfig,
    IvDgpSpec,
    RForm,
)
from app.services import simulation
from app.services.estimators import run_estimator
from app.services.inference import bootstrap
from app.services.simulation import (
    FIG1_SPEC,
    FULL_SCALE_REPS,
    coverage,
    draw,
    draw_iv,
    figure1_experiment,
    figure1_slopes,
    load_figure1,
    load_grid,
    preset,
    run_grid,
    true_ape,
)

ROLS_KNOWN = EstimatorSpec(name=EstimatorName.ROLS_KNOWN, label="R-OLS (known nu)")
SIMPLE_OLS = EstimatorSpec(name=EstimatorName.SIMPLE_OLS, label="simple OLS")


class TestDraw:
    """Synthetic samples."""

    def test_components_are_consistent(self, simple_draw):
        data = simple_draw.dataset
        np.testing.assert_allclose(data.x - simple_draw.r_of_z, simple_draw.nu_true, atol=1e-12)
        np.testing.assert_allclose(simple_draw.r_of_z, data.z[:, 0] * data.z[:, 1])
        level = sum(data.x**m * simple_draw.g_components[:, m] for m in range(3))
        np.testing.assert_allclose(data.y - level, simple_draw.epsilon, atol=1e-9)
        np.testing.assert_array_equal(data.nu_known, simple_draw.nu_true)

    def test_additive_outcome_is_linear_in_x(self):
        sample = draw(DgpSpec(y_family=Family.ADDITIVE, x_family=Family.ADDITIVE, M=3, n=100), 8)
        np.testing.assert_array_equal(sample.ape_contrib, np.ones(100))
        data = sample.dataset
        np.testing.assert_allclose(data.y - data.x - data.z.sum(axis=1), sample.epsilon, atol=1e-9)

    def test_deterministic(self):
        spec = DgpSpec(y_family=Family.COMPLEX, x_family=Family.COMPLEX, M=3, n=300)
        first, second = draw(spec, 4), draw(spec, 4)
        np.testing.assert_array_equal(first.dataset.y, second.dataset.y)
        assert not np.array_equal(first.dataset.y, draw(spec, 5).dataset.y)

    def test_fig1_design(self):
        sample = draw(FIG1_SPEC.model_copy(update={"n": 500}), 1)
        z = sample.dataset.z
        assert z.shape == (500, 1)
        assert z.min() >= 0.0 and z.max() <= 2.0
        np.testing.assert_allclose(sample.ape_contrib, 2.0 + 4.0 * sample.dataset.x)

    def test_mixture_errors(self):
        spec = DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE, error_dist=ErrorDistribution.gmix(0.9), n=50)
        assert draw(spec, 0).nu_true.shape == (50,)

    def test_fig1_families_are_paired(self):
        with pytest.raises(ParameterError):
            DgpSpec(y_family=Family.FIG1, x_family=Family.SIMPLE, M=2)

    def test_iv_draw(self):
        sample = draw_iv(IvDgpSpec(r_form=RForm.QUADRATIC, n=400), 2)
        np.testing.assert_allclose(sample.dataset.x - sample.r_of_wz, sample.zeta, atol=1e-12)
        np.testing.assert_allclose(sample.r_of_wz, sample.w + sample.w**2)
        np.testing.assert_array_equal(sample.dataset.w, sample.w)


class TestTrueApe:
    """Oracle APEs."""

    def test_additive_is_exact(self):
        assert true_ape(DgpSpec(y_family=Family.ADDITIVE, x_family=Family.SIMPLE)) == (1.0, 0.0)

    def test_small_oracle_rejected(self):
        with pytest.raises(ParameterError):
            true_ape(DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE), oracle_n=1000)

    @pytest.mark.parametrize("x_family,M,expected,tol", [
        (Family.SIMPLE, 1, 0.1673, 0.005),
        (Family.SIMPLE, 2, -0.139, 0.01),
        (Family.SIMPLE, 3, -2.061, 0.02),
        (Family.COMPLEX, 1, 0.1673, 0.005),
        (Family.COMPLEX, 2, 0.205, 0.02),
        (Family.COMPLEX, 3, 1.52, 0.05),
    ])
    def test_complex_outcome_headers(self, x_family, M, expected, tol):
        value, se = true_ape(DgpSpec(y_family=Family.COMPLEX, x_family=x_family, M=M), seed=1)
        assert value == pytest.approx(expected, abs=tol)
        assert se < tol

    @pytest.mark.parametrize("M,expected,tol", [(1, 1.0, 0.01), (2, 9.0, 0.1), (3, 60.0, 1.2)])
    def test_simple_outcome_closed_forms(self, M, expected, tol):
        # Z ~ N(1, 1): E[Z^2] = 2, E[Z^3] = 4, so E[r] = 1, E[r^2] = 4, E[r^3] = 16 for r = Z1 Z2
        value, se = true_ape(DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE, M=M), seed=3)
        assert value == pytest.approx(expected, abs=tol)
        assert se < tol

    def test_fig1_truth(self):
        value, _ = true_ape(FIG1_SPEC, seed=2)
        assert value == pytest.approx(2.0 * np.e**2, abs=0.02)


class TestRunGrid:
    """Monte Carlo harness."""

    SPECS = [DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE, M=1, n=200)]

    def test_reps_must_exceed_one(self):
        with pytest.raises(ParameterError):
            run_grid(self.SPECS, [ROLS_KNOWN], reps=1, base_seed=0)

    def test_duplicate_labels(self):
        with pytest.raises(ParameterError):
            run_grid(self.SPECS, [ROLS_KNOWN, ROLS_KNOWN], reps=3, base_seed=0)

    def test_cells_and_mse_identity(self):
        report = run_grid(self.SPECS, [ROLS_KNOWN, SIMPLE_OLS], reps=6, base_seed=3)
        assert len(report.cells) == 2
        cell = report.cell("R-OLS (known nu)", n=200, M=1)
        assert cell.reps == 6 and cell.failures == 0
        assert cell.mse == pytest.approx(cell.sd**2 + (cell.mean - cell.true_ape) ** 2, rel=1e-10)
        values = report.replications[f"{self.SPECS[0].label()}|R-OLS (known nu)|200|1"]
        assert cell.mean == pytest.approx(np.mean(values))
        assert report.config["reps"] == 6

    def test_deterministic(self):
        first = run_grid(self.SPECS, [ROLS_KNOWN], reps=4, base_seed=9)
        second = run_grid(self.SPECS, [ROLS_KNOWN], reps=4, base_seed=9)
        assert first.model_dump() == second.model_dump()

    def test_workers_do_not_change_results(self):
        serial = run_grid(self.SPECS, [ROLS_KNOWN], reps=4, base_seed=9, workers=1)
        parallel = run_grid(self.SPECS, [ROLS_KNOWN], reps=4, base_seed=9, workers=2)
        assert serial.replications == parallel.replications

    def test_estimators_share_each_draw(self):
        twin = ROLS_KNOWN.model_copy(update={"label": "twin"})
        report = run_grid(self.SPECS, [ROLS_KNOWN, twin], reps=4, base_seed=1)
        label = self.SPECS[0].label()
        assert report.replications[f"{label}|R-OLS (known nu)|200|1"] == report.replications[f"{label}|twin|200|1"]

    def test_failures_are_counted(self):
        iv = EstimatorSpec(name=EstimatorName.IV)
        report = run_grid(self.SPECS, [ROLS_KNOWN, iv], reps=3, base_seed=2)
        cell = report.cell("iv", n=200, M=1)
        assert cell.failures == 3
        assert cell.reps == 0
        assert np.isnan(cell.mean)
        assert report.cell("R-OLS (known nu)", n=200, M=1).failures == 0


class TestGridFiles:
    """INI grids and bundled presets."""

    def test_preset_expands_designs(self):
        grid = preset("table4")
        assert isinstance(grid, GridConfig)
        assert len(grid.specs) == 12
        assert len(grid.estimators) == 5
        assert {spec.M for spec in grid.specs} == {1, 2, 3}
        assert set(grid.blocks.values()) == {"complex_y_simple_x"}

    def test_full_scale(self):
        assert preset("table3", full_scale=True).reps == FULL_SCALE_REPS

    def test_unknown_preset(self):
        with pytest.raises(ParameterError):
            preset("table9")

    def test_figure1_preset(self):
        config = preset("figure1")
        assert isinstance(config, Figure1Config)
        assert config.epochs_range == (50, 200)
        assert config.reps == 200

    def test_load_grid(self, tmp_path):
        path = tmp_path / "mini.cfg"
        path.write_text(
            "[grid]\nname = mini\nreps = 7\nseed = 5\nn = 100, 200  # two sizes\n\n"
            "[dgp.base]\ny_family = simple\nx_family = additive\nM = 1, 2\nerror = gmix(0.9)\n\n"
            "[estimators]\nR-OLS = rols\nOLS = simple_ols\n"
        )
        grid = load_grid(path)
        assert (grid.name, grid.reps, grid.seed) == ("mini", 7, 5)
        assert [(s.M, s.n) for s in grid.specs] == [(1, 100), (1, 200), (2, 100), (2, 200)]
        assert grid.specs[0].error_dist == ErrorDistribution.gmix(0.9)
        assert [e.label for e in grid.estimators] == ["R-OLS", "OLS"]

    def test_missing_sections(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[grid]\nreps = 3\n")
        with pytest.raises(ParameterError):
            load_grid(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParameterError):
            load_grid(tmp_path / "absent.cfg")

    def test_unknown_family(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[grid]\n[dgp.x]\ny_family = cubic\nx_family = simple\n[estimators]\na = rols\n")
        with pytest.raises(ParameterError):
            load_grid(path)

    def test_load_figure1_epochs(self, tmp_path):
        path = tmp_path / "f.cfg"
        path.write_text("[figure1]\nepochs = 10, 20\nseed = 3\n")
        config = load_figure1(path)
        assert config.epochs_range == (10, 20)
        assert config.seed == 3


class TestFigure1:
    """Nuisance-quality experiment."""

    @pytest.mark.parametrize("kwargs", [{"reps": 5, "n": 1000}, {"reps": 20, "n": 100}])
    def test_size_preconditions(self, kwargs):
        with pytest.raises(ParameterError):
            figure1_experiment(**kwargs)

    def test_bad_epoch_range(self):
        with pytest.raises(ParameterError):
            figure1_experiment(reps=20, n=200, epochs_range=(0, 5))

    def test_short_run_records(self):
        records = figure1_experiment(reps=20, n=200, epochs_range=(1, 2), seed=3)
        assert len(records) == 20
        assert all(1 <= r.epochs_r <= 2 and 1 <= r.epochs_l <= 2 for r in records)
        assert all(-1.0 <= r.corr_nu_z <= 1.0 for r in records)

    def test_nuisance_learners_use_distinct_seeds(self, monkeypatch):
        calls = []
        crossfit = simulation.crossfit_residualise

        def recording(data, target, spec, folds, seed, **kwargs):
            calls.append((target, seed))
            return crossfit(data, target, spec, folds, seed, **kwargs)

        monkeypatch.setattr(simulation, "crossfit_residualise", recording)
        figure1_experiment(reps=20, n=200, epochs_range=(1, 1), seed=5)
        assert [target for target, _ in calls] == ["treatment", "outcome"] * 20
        for (_, seed_r), (_, seed_l) in zip(calls[::2], calls[1::2]):
            assert seed_r != seed_l

    def test_slopes_on_known_lines(self):
        corr = np.linspace(-0.3, 0.3, 25)
        wiggle = 0.01 * np.sin(np.arange(25))
        records = [
            Figure1Record(replication=i, epochs_r=50, epochs_l=50, corr_nu_z=c,
                          rols_estimate=14.78 + 10.0 * c + w, dml_estimate=14.78 + w, dml_se=0.5)
            for i, (c, w) in enumerate(zip(corr, wiggle))
        ]
        rols_fit, dml_fit = figure1_slopes(records)
        assert rols_fit.estimator == "rols"
        assert rols_fit.slope == pytest.approx(10.0, abs=0.1)
        assert abs(rols_fit.z) > 2
        assert dml_fit.slope == pytest.approx(0.0, abs=0.1)
        assert dml_fit.intercept == pytest.approx(14.78, abs=0.01)

    def test_slopes_need_records(self):
        with pytest.raises(ParameterError):
            figure1_slopes([])


@pytest.mark.slow
class TestDeskScaleAcceptance:
    """Monte Carlo acceptance runs (``--runslow``)."""

    def test_known_nu_coverage(self):
        spec = DgpSpec(y_family=Family.ADDITIVE, x_family=Family.ADDITIVE, n=1000)
        share = coverage(spec, ROLS_KNOWN, reps=1000, base_seed=0, workers=4)
        assert 0.93 <= share <= 0.97

    @pytest.mark.parametrize("x_family", [Family.SIMPLE, Family.COMPLEX])
    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_known_nu_matches_oracle(self, x_family, M):
        spec = DgpSpec(y_family=Family.COMPLEX, x_family=x_family, M=M, n=5000)
        report = run_grid([spec], [ROLS_KNOWN], reps=500, base_seed=M, workers=4)
        cell = report.cells[0]
        assert abs(cell.mean - cell.true_ape) <= 2 * cell.sd / np.sqrt(500)

    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_known_nu_matches_oracle_for_simple_outcome(self, M):
        spec = DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE, M=M, n=5000)
        report = run_grid([spec], [ROLS_KNOWN], reps=500, base_seed=10 + M, workers=4)
        cell = report.cells[0]
        assert abs(cell.mean - cell.true_ape) <= 2 * cell.sd / np.sqrt(500)

    def test_table3_regression_baselines(self):
        grid = preset("table3")
        specs = [s for s in grid.specs if s.n == 1000]
        report = run_grid(specs, grid.estimators, reps=500, base_seed=grid.seed, workers=4)
        for cell in report.cells:
            assert cell.mean == pytest.approx(1.0, abs=0.03), (cell.dgp, cell.estimator)

    def test_table4_sign_flip(self):
        grid = preset("table4")
        specs = [s for s in grid.specs if s.n == 5000 and s.M == 2]
        report = run_grid(specs, grid.estimators, reps=500, base_seed=grid.seed, workers=4)
        assert -1.2 <= report.cell("simple OLS", 5000, 2).mean <= -0.9
        assert -1.25 <= report.cell("PL-GAM", 5000, 2).mean <= -0.95
        assert report.cell("interacted OLS", 5000, 2).mean == pytest.approx(-0.14, abs=0.05)
        assert report.cell("R-OLS", 5000, 2).mean == pytest.approx(-0.14, abs=0.05)

    def test_table6_mixture_errors(self):
        grid = preset("table6")
        specs = [s for s in grid.specs if s.n == 5000]
        keep = {"simple OLS", "PL-GAM", "R-OLS (known nu)"}
        estimators = [e for e in grid.estimators if e.label in keep]
        report = run_grid(specs, estimators, reps=500, base_seed=grid.seed, workers=4)

        def bias(label, M):
            cell = report.cell(label, 5000, M)
            return cell.mean - cell.true_ape

        assert abs(bias("R-OLS (known nu)", 1)) <= 0.03
        assert abs(bias("R-OLS (known nu)", 2)) <= 0.03
        # the fourth-moment ladder fails for the mixture, pulling the M=3 estimate down
        assert bias("R-OLS (known nu)", 3) <= -0.1
        assert abs(bias("R-OLS (known nu)", 3)) < abs(bias("simple OLS", 3))
        assert abs(bias("R-OLS (known nu)", 3)) < abs(bias("PL-GAM", 3))

    def test_figure1_robustness(self):
        records = figure1_experiment(reps=200, n=1000, seed=1, workers=4)
        rols_fit, dml_fit = figure1_slopes(records)
        assert abs(dml_fit.z) < 2
        assert abs(rols_fit.z) > 2

    def test_dml_standard_error_matches_bootstrap(self):
        data = draw(FIG1_SPEC, 7).dataset
        spec = EstimatorSpec.parse("dml(learner=poly(degree=3),folds=4)")

        def dml_point(sample, seed):
            return run_estimator(spec, sample, seed)

        analytic = dml_point(data, 0)
        boot = bootstrap(data, dml_point, B=200, seed=8, workers=4)
        assert boot.se == pytest.approx(analytic.std_error, rel=0.2)
