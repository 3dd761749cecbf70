"""
Synthetic designs, the true-APE oracle and the Monte Carlo harness.

Designs
-------
Controls are N(1, 1) with K = 2 (the fig1 design uses one Unif(0, 2) control).

    X-family    r(Z)                 Y-family    g_m(Z)
    additive    Z1 + Z2              additive    g_0 = Z1 + Z2, g_1 = 1, g_m = 0 (m >= 2)
    simple      Z1 Z2                simple      Z1 Z2 for every m
    complex     5 sin(Z1) cos(Z2)    complex     cos(Z1) sin(Z2) for every m
    fig1        exp(Z)               fig1        g_0 = Z^3, g_1 = g_2 = 2

with X = r(Z) + nu and Y = sum_m X^m g_m(Z) + eps, eps ~ N(0, 1).
"""
import configparser
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from app.models.errors import ApeError, ParameterError
from app.models.schemas import (
    Dataset,
    DgpSpec,
    ErrorDistribution,
    EstimatorSpec,
    Family,
    Figure1Config,
    Figure1Record,
    GFamily,
    GridConfig,
    IvDgpSpec,
    IvDraw,
    LearnerKind,
    LearnerSpec,
    RForm,
    SimCell,
    SimReport,
    SlopeFit,
    SyntheticDraw,
)
from app.services.crossfit import crossfit_residualise, safe_corr
from app.services.datamodel import make_folds
from app.services.distributions import sample
from app.services.estimators import plr_from_residuals, rols, run_estimator
from app.services.numkit import sandwich_variance, solve_ls, stack_design
from app.utils.helpers import derive_seed, make_rng, parse_int_list
from config.settings import get_grid_file

logger = logging.getLogger(__name__)

MIN_ORACLE_N = 1_000_000
ORACLE_STREAM = 2**32
FULL_SCALE_REPS = 10_000
PRESETS = ("table3", "table4", "table5", "table6", "table7", "figure1")

_FAILURES = (ApeError, np.linalg.LinAlgError, FloatingPointError)


# ============ Designs ============

def _controls(spec: DgpSpec, n: int, seed: int) -> np.ndarray:
    rng = make_rng(derive_seed(seed, 0))
    if spec.x_family is Family.FIG1:
        return rng.uniform(0.0, 2.0, (n, 1))
    return rng.normal(1.0, 1.0, (n, 2))


def treatment_form(family: Family, z: np.ndarray) -> np.ndarray:
    """r(Z) of an X-family."""
    if family is Family.ADDITIVE:
        return z[:, 0] + z[:, 1]
    if family is Family.SIMPLE:
        return z[:, 0] * z[:, 1]
    if family is Family.COMPLEX:
        return 5.0 * np.sin(z[:, 0]) * np.cos(z[:, 1])
    return np.exp(z[:, 0])


def outcome_components(family: Family, z: np.ndarray, M: int) -> np.ndarray:
    """Columns g_0(Z) .. g_M(Z) of a Y-family."""
    n = z.shape[0]
    g = np.empty((n, M + 1))
    if family is Family.ADDITIVE:
        g[:, 0] = z[:, 0] + z[:, 1]
        g[:, 1] = 1.0
        g[:, 2:] = 0.0
    elif family is Family.SIMPLE:
        g[:] = (z[:, 0] * z[:, 1])[:, None]
    elif family is Family.COMPLEX:
        g[:] = (np.cos(z[:, 0]) * np.sin(z[:, 1]))[:, None]
    else:
        g[:, 0] = z[:, 0] ** 3
        g[:, 1:] = 2.0
    return g


def _systematic(x: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``sum_m x^m g_m`` and its x-derivative ``sum_m m x^(m-1) g_m``."""
    level = np.zeros_like(x)
    slope = np.zeros_like(x)
    power = np.ones_like(x)
    for m in range(g.shape[1]):
        if m >= 1:
            slope += m * power * g[:, m]
            power = power * x
        level += power * g[:, m]
    return level, slope


def _latent(spec: DgpSpec, n: int, seed: int):
    z = _controls(spec, n, seed)
    nu = sample(spec.error_dist, n, derive_seed(seed, 1))
    r = treatment_form(spec.x_family, z)
    x = r + nu
    g = outcome_components(spec.y_family, z, spec.M)
    return z, nu, r, x, g


def draw(spec: DgpSpec, seed: int) -> SyntheticDraw:
    """One realisation of ``spec`` with every latent component exposed."""
    n = spec.n
    z, nu, r, x, g = _latent(spec, n, seed)
    eps = make_rng(derive_seed(seed, 2)).standard_normal(n)
    level, slope = _systematic(x, g)
    return SyntheticDraw(
        dataset=Dataset(y=level + eps, x=x, z=z, nu_known=nu),
        nu_true=nu,
        r_of_z=r,
        g_components=g,
        ape_contrib=slope,
        epsilon=eps,
    )


def true_ape(spec: DgpSpec, oracle_n: int = MIN_ORACLE_N, seed: int = 0) -> Tuple[float, float]:
    """Monte Carlo mean of ∂Y/∂X over a fresh large draw, with its simulation SE."""
    if oracle_n < MIN_ORACLE_N:
        raise ParameterError(f"oracle_n must be >= {MIN_ORACLE_N}, got {oracle_n}")
    if spec.y_family is Family.ADDITIVE:
        return 1.0, 0.0
    _, _, _, x, g = _latent(spec, oracle_n, seed)
    _, slope = _systematic(x, g)
    return float(slope.mean()), float(slope.std(ddof=1) / np.sqrt(oracle_n))


# ============ IV designs ============

def instrument_form(spec: IvDgpSpec, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """r(W, Z) of an IV design, scaled by the instrument strength."""
    if spec.r_form is RForm.LINEAR:
        base = w
    elif spec.r_form is RForm.QUADRATIC:
        base = w + w**2
    else:
        base = w * (1.0 + z[:, 0] ** 2)
    return spec.strength * base


def draw_iv(spec: IvDgpSpec, seed: int) -> IvDraw:
    """X = r(W, Z) + ζ with (ζ, ε) correlated normals; Y as in the outcome families."""
    n = spec.n
    rng = make_rng(derive_seed(seed, 0))
    z = rng.normal(1.0, 1.0, (n, 2))
    w = sample(spec.instrument, n, derive_seed(seed, 1))
    shocks = make_rng(derive_seed(seed, 2)).standard_normal((n, 2))
    zeta = shocks[:, 0]
    eps = spec.rho * zeta + np.sqrt(1.0 - spec.rho**2) * shocks[:, 1]

    r = instrument_form(spec, w, z)
    x = r + zeta
    g = np.empty((n, spec.M + 1))
    g[:, 0] = z[:, 0] + z[:, 1]
    g[:, 1:] = 1.0 if spec.g_family is GFamily.CONSTANT else (z[:, 0] * z[:, 1])[:, None]
    level, slope = _systematic(x, g)
    return IvDraw(
        dataset=Dataset(y=level + eps, x=x, z=z, w=w),
        w=w,
        zeta=zeta,
        r_of_wz=r,
        g_components=g,
        ape_contrib=slope,
        epsilon=eps,
    )


# ============ Monte Carlo harness ============

def _replicate(
    spec: DgpSpec,
    estimators: Sequence[EstimatorSpec],
    seed: int,
) -> List[Optional[float]]:
    sample_draw = draw(spec, seed)
    estimator_seed = derive_seed(seed, 3)
    out: List[Optional[float]] = []
    for estimator in estimators:
        try:
            result = run_estimator(estimator, sample_draw.dataset, estimator_seed, r_of_z=sample_draw.r_of_z)
            out.append(result.point)
        except _FAILURES as exc:
            logger.warning("%s failed on %s (seed %d): %s", estimator.label, spec.label(), seed, exc)
            out.append(None)
    return out


def _oracle_key(spec: DgpSpec) -> str:
    return f"{spec.label()}|M={spec.M}"


def run_grid(
    specs: Sequence[DgpSpec],
    estimators: Sequence[EstimatorSpec],
    reps: int,
    base_seed: int,
    workers: int = 1,
    oracle_n: int = MIN_ORACLE_N,
) -> SimReport:
    """
    Run every estimator on ``reps`` shared draws of every design.

    Replication ``rep`` of design ``s`` uses seed ``derive_seed(base_seed, s, rep)``;
    all estimators see the same draw. Failures are counted per cell and never abort
    the grid. SD and MSE divide by the number of successful replications, so
    ``mse = sd² + bias²``.
    """
    if reps < 2:
        raise ParameterError(f"reps must be >= 2, got {reps}")
    labels = [e.label for e in estimators]
    if not labels or len(set(labels)) != len(labels):
        raise ParameterError(f"estimator labels must be unique and non-empty, got {labels}")

    truths: Dict[str, Tuple[float, float]] = {}
    for s, spec in enumerate(specs):
        key = _oracle_key(spec)
        if key not in truths:
            truths[key] = true_ape(spec, oracle_n, derive_seed(base_seed, s, ORACLE_STREAM))
            logger.info("true APE %s = %.4f (se %.2g)", key, *truths[key])

    units = [(s, rep) for s in range(len(specs)) for rep in range(reps)]
    results = Parallel(n_jobs=workers)(
        delayed(_replicate)(specs[s], estimators, derive_seed(base_seed, s, rep)) for s, rep in units
    )

    cells: List[SimCell] = []
    replications: Dict[str, List[Optional[float]]] = {}
    for s, spec in enumerate(specs):
        rows = results[s * reps : (s + 1) * reps]
        truth, truth_se = truths[_oracle_key(spec)]
        for j, estimator in enumerate(estimators):
            values = [row[j] for row in rows]
            replications[f"{spec.label()}|{estimator.label}|{spec.n}|{spec.M}"] = values
            ok = np.array([v for v in values if v is not None], dtype=np.float64)
            if ok.size:
                mean, sd = float(ok.mean()), float(ok.std(ddof=0))
                mse = float(np.mean((ok - truth) ** 2))
            else:
                mean = sd = mse = float("nan")
            cells.append(SimCell(
                dgp=spec.label(), estimator=estimator.label, n=spec.n, M=spec.M,
                mean=mean, sd=sd, mse=mse, reps=int(ok.size), failures=reps - int(ok.size),
                true_ape=truth, true_ape_se=truth_se,
            ))

    config = {
        "reps": reps,
        "base_seed": base_seed,
        "oracle_n": oracle_n,
        "designs": [f"{spec.label()}|n={spec.n}|M={spec.M}" for spec in specs],
        "estimators": {e.label: str(e) for e in estimators},
    }
    return SimReport(
        cells=cells,
        true_ape={key: value for key, (value, _) in truths.items()},
        config=config,
        replications=replications,
    )


def _covers(spec: DgpSpec, estimator: EstimatorSpec, seed: int, truth: float, alpha: float) -> Optional[bool]:
    sample_draw = draw(spec, seed)
    try:
        result = run_estimator(
            estimator, sample_draw.dataset, derive_seed(seed, 3), r_of_z=sample_draw.r_of_z, alpha=alpha
        )
    except _FAILURES as exc:
        logger.warning("coverage replication failed (seed %d): %s", seed, exc)
        return None
    return result.ci_low <= truth <= result.ci_high


def coverage(
    spec: DgpSpec,
    estimator: EstimatorSpec,
    reps: int,
    base_seed: int,
    alpha: float = 0.05,
    workers: int = 1,
    oracle_n: int = MIN_ORACLE_N,
) -> float:
    """Share of ``reps`` replications whose (1 - alpha) CI contains the true APE."""
    if reps < 2:
        raise ParameterError(f"reps must be >= 2, got {reps}")
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    truth, _ = true_ape(spec, oracle_n, derive_seed(base_seed, 0, ORACLE_STREAM))
    hits = Parallel(n_jobs=workers)(
        delayed(_covers)(spec, estimator, derive_seed(base_seed, 0, rep), truth, alpha) for rep in range(reps)
    )
    done = [h for h in hits if h is not None]
    if not done:
        raise ParameterError("every coverage replication failed")
    return float(np.mean(done))


# ============ Nuisance-quality experiment ============

FIG1_SPEC = DgpSpec(y_family=Family.FIG1, x_family=Family.FIG1, M=2)


def _mlp(epochs: int) -> LearnerSpec:
    return LearnerSpec(kind=LearnerKind.MLP, layers=3, width=64, epochs=epochs)


def _figure1_replication(
    rep: int, n: int, epochs_range: Tuple[int, int], seed: int, folds: int
) -> Optional[Figure1Record]:
    rep_seed = derive_seed(seed, rep)
    sample_draw = draw(FIG1_SPEC.model_copy(update={"n": n}), rep_seed)
    data = sample_draw.dataset
    lo, hi = epochs_range
    epochs = make_rng(derive_seed(rep_seed, 3)).integers(lo, hi + 1, size=2)
    try:
        assignment = make_folds(n, folds, derive_seed(rep_seed, 4))
        fit_r = crossfit_residualise(data, "treatment", _mlp(int(epochs[0])), folds, derive_seed(rep_seed, 5),
                                     fold_assignment=assignment)
        fit_l = crossfit_residualise(data, "outcome", _mlp(int(epochs[1])), folds, derive_seed(rep_seed, 6),
                                     fold_assignment=assignment)
        rols_estimate = rols(fit_r.residuals, data.y)
        dml_estimate = plr_from_residuals(fit_r.residuals, fit_l.residuals)
    except _FAILURES as exc:
        logger.warning("figure1 replication %d skipped: %s", rep, exc)
        return None
    return Figure1Record(
        replication=rep,
        epochs_r=int(epochs[0]),
        epochs_l=int(epochs[1]),
        corr_nu_z=safe_corr(fit_r.residuals, data.z[:, 0]),
        rols_estimate=rols_estimate.point,
        dml_estimate=dml_estimate.point,
        dml_se=dml_estimate.std_error,
    )


def figure1_experiment(
    reps: int,
    n: int,
    epochs_range: Tuple[int, int] = (50, 200),
    seed: int = 0,
    folds: int = 4,
    workers: int = 1,
) -> List[Figure1Record]:
    """
    R-OLS and DML under deliberately imperfect nuisance fits.

    Each replication draws the fig1 design and trains 3x64 MLPs for r and l with
    epoch counts drawn uniformly from ``epochs_range`` (inclusive).
    """
    if reps < 20:
        raise ParameterError(f"reps must be >= 20, got {reps}")
    if n < 200:
        raise ParameterError(f"n must be >= 200, got {n}")
    Figure1Config(reps=reps, n=n, epochs_range=epochs_range, folds=folds, seed=seed)
    records = Parallel(n_jobs=workers)(
        delayed(_figure1_replication)(rep, n, epochs_range, seed, folds) for rep in range(reps)
    )
    kept = [r for r in records if r is not None]
    if len(kept) < reps:
        logger.warning("figure1: %d of %d replications skipped", reps - len(kept), reps)
    return kept


def figure1_slopes(records: Sequence[Figure1Record]) -> List[SlopeFit]:
    """OLS line of each estimate on corr(ν̂, Z) with HC0 slope SE."""
    if len(records) < 3:
        raise ParameterError(f"need at least 3 records, got {len(records)}")
    corr = np.array([r.corr_nu_z for r in records])
    design = stack_design({"1": np.ones(corr.size), "corr_nu_z": corr})
    fits: List[SlopeFit] = []
    for name in ("rols_estimate", "dml_estimate"):
        y = np.array([getattr(r, name) for r in records])
        fit = solve_ls(design, y)
        se = float(np.sqrt(sandwich_variance(design, fit).matrix[1, 1]))
        slope = float(fit.coefficients[1])
        fits.append(SlopeFit(
            estimator=name.replace("_estimate", ""),
            intercept=float(fit.coefficients[0]),
            slope=slope,
            std_error=se,
            z=slope / se if se > 0 else float("inf"),
        ))
    return fits


# ============ Grid files and presets ============

def _read_config(path: Union[str, Path]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"grid file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ParameterError(f"malformed grid file {path}: {exc}") from exc
    return parser


def load_grid(path: Union[str, Path]) -> GridConfig:
    """
    Parse an INI grid file.

    ``[grid]`` holds reps, seed, n (list) and oracle_n; each ``[dgp.<name>]`` section
    gives y_family, x_family, M (list) and error; ``[estimators]`` maps report labels
    to estimator spec strings.
    """
    parser = _read_config(path)
    if not parser.has_section("grid") or not parser.has_section("estimators"):
        raise ParameterError(f"{path}: a grid needs [grid] and [estimators] sections")
    grid = parser["grid"]
    n_values = parse_int_list(grid.get("n", "1000"))

    specs: List[DgpSpec] = []
    blocks: Dict[str, str] = {}
    for section in parser.sections():
        if not section.startswith("dgp."):
            continue
        block = parser[section]
        name = section[len("dgp."):]
        try:
            y_family = Family(block.get("y_family", "").strip().lower())
            x_family = Family(block.get("x_family", "").strip().lower())
        except ValueError as exc:
            raise ParameterError(f"[{section}]: {exc}") from exc
        error = ErrorDistribution.parse(block.get("error", "normal(0,1)"))
        for M in parse_int_list(block.get("M", "1")):
            for n in n_values:
                spec = DgpSpec(y_family=y_family, x_family=x_family, M=M, error_dist=error, n=n)
                specs.append(spec)
                blocks[spec.label()] = name
    if not specs:
        raise ParameterError(f"{path}: no [dgp.*] sections")

    estimators = [EstimatorSpec.parse(text, label=label) for label, text in parser["estimators"].items()]
    try:
        return GridConfig(
            name=grid.get("name", Path(path).stem),
            reps=grid.getint("reps", 500),
            seed=grid.getint("seed", 0),
            oracle_n=grid.getint("oracle_n", MIN_ORACLE_N),
            specs=specs,
            estimators=estimators,
            blocks=blocks,
        )
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from exc


def load_figure1(path: Union[str, Path]) -> Figure1Config:
    """Parse the ``[figure1]`` section of a grid file."""
    parser = _read_config(path)
    if not parser.has_section("figure1"):
        raise ParameterError(f"{path}: missing [figure1] section")
    section = parser["figure1"]
    epochs = parse_int_list(section.get("epochs", "50, 200"))
    if len(epochs) != 2:
        raise ParameterError(f"{path}: epochs needs two values, got {epochs}")
    try:
        return Figure1Config(
            reps=section.getint("reps", 200),
            n=section.getint("n", 1000),
            epochs_range=(epochs[0], epochs[1]),
            folds=section.getint("folds", 4),
            seed=section.getint("seed", 0),
        )
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from exc


def preset(name: str, full_scale: bool = False) -> Union[GridConfig, Figure1Config]:
    """Bundled grid by name; ``full_scale`` raises reps to the published 10000."""
    if name not in PRESETS:
        raise ParameterError(f"unknown preset '{name}' (choose from {', '.join(PRESETS)})")
    path = get_grid_file(name)
    config = load_figure1(path) if name == "figure1" else load_grid(path)
    if full_scale and name != "figure1":
        config = config.model_copy(update={"reps": FULL_SCALE_REPS})
    return config
