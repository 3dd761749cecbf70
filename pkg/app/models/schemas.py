"""
APE Toolkit Data Models (Pydantic Schemas)
"""
import math
import uuid
from datetime import datetime
from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator

from app.models.errors import (
    DegenerateError,
    NumericError,
    ParameterError,
    ParseError,
    RoleError,
    ShapeError,
    SizeError,
)
from app.utils.helpers import check_seed, parse_bool, parse_call


def _read_only(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _vector(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"expected a 1-D sequence, got shape {arr.shape}")
    return _read_only(arr)


def _int_vector(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=np.int64)
    if arr.ndim != 1:
        raise ShapeError(f"expected a 1-D sequence, got shape {arr.shape}")
    return _read_only(arr)


def _matrix(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return _read_only(np.asfortranarray(arr))


_as_list = PlainSerializer(lambda arr: arr.tolist(), when_used="json")

Vector = Annotated[np.ndarray, BeforeValidator(_vector), _as_list]
IntVector = Annotated[np.ndarray, BeforeValidator(_int_vector), _as_list]
Matrix = Annotated[np.ndarray, BeforeValidator(_matrix), _as_list]

UMIX_AUTO = math.sqrt(5.0 + math.sqrt(24.0))


class ArrayModel(BaseModel):
    """Immutable model holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ============ Data Models ============

class ColumnRoles(BaseModel):
    """Which CSV column plays which role."""

    model_config = ConfigDict(frozen=True)

    outcome: str = "y"
    treatment: str = "x"
    controls: List[str] = Field(default_factory=list)
    instrument: Optional[str] = None
    nu_known: Optional[str] = None

    @model_validator(mode="after")
    def _unique(self) -> "ColumnRoles":
        names = self.columns()
        if len(set(names)) != len(names):
            raise RoleError(f"a column may play only one role: {names}")
        return self

    def columns(self) -> List[str]:
        """All mapped column names in output order."""
        names = [self.outcome, self.treatment, *self.controls]
        if self.instrument:
            names.append(self.instrument)
        if self.nu_known:
            names.append(self.nu_known)
        return names

    @classmethod
    def from_mapping(cls, mapping: Dict[str, str]) -> "ColumnRoles":
        """
        Build roles from a ``{column: role}`` mapping.

        Roles: ``outcome``, ``treatment``, ``control``, ``instrument``,
        ``known_error`` (alias ``nu``).
        """
        grouped: Dict[str, List[str]] = {}
        for column, role in mapping.items():
            role = role.strip().lower()
            if role == "nu":
                role = "known_error"
            if role not in {"outcome", "treatment", "control", "instrument", "known_error"}:
                raise RoleError(f"unknown role '{role}' for column '{column}'")
            grouped.setdefault(role, []).append(column)

        for required in ("outcome", "treatment"):
            if len(grouped.get(required, [])) != 1:
                raise RoleError(f"exactly one column must have role '{required}'")
        for optional in ("instrument", "known_error"):
            if len(grouped.get(optional, [])) > 1:
                raise RoleError(f"at most one column may have role '{optional}'")

        return cls(
            outcome=grouped["outcome"][0],
            treatment=grouped["treatment"][0],
            controls=grouped.get("control", []),
            instrument=(grouped.get("instrument") or [None])[0],
            nu_known=(grouped.get("known_error") or [None])[0],
        )


class Dataset(ArrayModel):
    """
    Columnar sample: outcome ``y``, treatment ``x``, controls ``z`` (n x K),
    optional instrument ``w`` and optional known exogenous error ``nu_known``.
    """

    y: Vector
    x: Vector
    z: Matrix
    w: Optional[Vector] = None
    nu_known: Optional[Vector] = None
    roles: ColumnRoles

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        n = len(np.atleast_1d(data.get("y", [])))
        z = data.get("z")
        if z is None:
            z = np.empty((n, 0))
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        data["z"] = z
        if data.get("roles") is None:
            data["roles"] = ColumnRoles(
                controls=[f"z{k + 1}" for k in range(z.shape[1])],
                instrument="w" if data.get("w") is not None else None,
                nu_known="nu" if data.get("nu_known") is not None else None,
            )
        return data

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        n = self.y.shape[0]
        if n < 2:
            raise SizeError(f"a dataset needs at least 2 rows, got {n}")
        columns = {"y": self.y, "x": self.x, "w": self.w, "nu_known": self.nu_known}
        for name, column in columns.items():
            if column is None:
                continue
            if column.shape[0] != n:
                raise ShapeError(f"column '{name}' has length {column.shape[0]}, expected {n}")
            bad = np.flatnonzero(~np.isfinite(column))
            if bad.size:
                raise ParseError(f"non-finite value in '{name}' at row {bad[0]}", row=int(bad[0]), column=name)
        if self.z.shape[0] != n:
            raise ShapeError(f"controls have {self.z.shape[0]} rows, expected {n}")
        if not np.all(np.isfinite(self.z)):
            row, col = np.argwhere(~np.isfinite(self.z))[0]
            raise ParseError(f"non-finite control value at row {row}, column {col}", row=int(row), column=f"z{col + 1}")
        if len(self.roles.controls) != self.z.shape[1]:
            raise RoleError("control names do not match the number of control columns")
        return self

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def k(self) -> int:
        return int(self.z.shape[1])

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset (with repetition allowed) preserving roles."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            y=self.y[idx],
            x=self.x[idx],
            z=self.z[idx, :],
            w=None if self.w is None else self.w[idx],
            nu_known=None if self.nu_known is None else self.nu_known[idx],
            roles=self.roles,
        )


class FoldAssignment(ArrayModel):
    """Partition of ``n`` rows into ``folds`` cross-fitting folds."""

    fold_of: IntVector
    folds: int
    seed: int

    @model_validator(mode="after")
    def _check(self) -> "FoldAssignment":
        if self.folds < 2:
            raise ParameterError(f"folds must be >= 2, got {self.folds}")
        if self.fold_of.size and (self.fold_of.min() < 0 or self.fold_of.max() >= self.folds):
            raise ParameterError("fold index out of range")
        sizes = self.sizes()
        if sizes.min() == 0:
            raise ParameterError("every fold must be non-empty")
        if sizes.max() - sizes.min() > 1:
            raise ParameterError("fold sizes must differ by at most one")
        check_seed(self.seed)
        return self

    @property
    def n(self) -> int:
        return int(self.fold_of.shape[0])

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.folds)

    def split(self, fold: int) -> Tuple[np.ndarray, np.ndarray]:
        """(train indices, evaluation indices) for ``fold``."""
        mask = self.fold_of == fold
        return np.flatnonzero(~mask), np.flatnonzero(mask)


# ============ Estimate Models ============

class Method(str, Enum):
    """Estimator behind an ApeEstimate."""

    ROLS_KNOWN_NU = "ROLS_KNOWN_NU"
    ROLS_ML = "ROLS_ML"
    OLS_FWL = "OLS_FWL"
    DML_PLR = "DML_PLR"
    SIMPLE_OLS = "SIMPLE_OLS"
    INTERACTED_OLS = "INTERACTED_OLS"
    PL_SPLINE = "PL_SPLINE"
    IV_APE = "IV_APE"


class ApeEstimate(BaseModel):
    """Point estimate of the average partial effect with inference."""

    point: float
    std_error: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    method: Method
    n_used: int
    diagnostics: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "ApeEstimate":
        if not math.isfinite(self.point):
            raise NumericError(f"{self.method.value}: non-finite point estimate")
        if self.std_error is not None and (not math.isfinite(self.std_error) or self.std_error < 0):
            raise NumericError(f"{self.method.value}: invalid standard error {self.std_error}")
        if (self.ci_low is None) != (self.ci_high is None):
            raise ParameterError("confidence interval needs both bounds")
        if self.ci_low is not None and not self.ci_low <= self.point <= self.ci_high:
            raise NumericError("confidence interval does not contain the point estimate")
        return self


class RolsInput(ArrayModel):
    """Treatment error (known or estimated) and outcome for the R-OLS ratio."""

    nu: Vector
    y: Vector

    @model_validator(mode="after")
    def _check(self) -> "RolsInput":
        if self.nu.shape != self.y.shape:
            raise ShapeError(f"nu has length {self.nu.size}, y has length {self.y.size}")
        if self.nu.size < 2:
            raise SizeError("R-OLS needs at least 2 observations")
        if not self.nu @ self.nu > 0:
            raise DegenerateError("sum of squared treatment errors is zero")
        return self


class IvInput(ArrayModel):
    """Instrument, treatment and outcome of a just-identified IV regression."""

    w: Vector
    x: Vector
    y: Vector

    @model_validator(mode="after")
    def _check(self) -> "IvInput":
        if not self.w.shape == self.x.shape == self.y.shape:
            raise ShapeError("w, x and y must have equal length")
        if self.w.size < 2:
            raise SizeError("IV needs at least 2 observations")
        w = self.w - self.w.mean()
        first_stage = abs(float(w @ self.x))
        scale = float(np.sqrt((w @ w) * (self.x @ self.x)))
        if not first_stage > 1e-10 * scale or scale == 0:
            raise DegenerateError("degenerate first stage: demeaned instrument is orthogonal to the treatment")
        return self


# ============ Linear Algebra Models ============

class DesignMatrix(ArrayModel):
    """Regressor matrix with unique column labels."""

    values: Matrix
    column_labels: List[str]
    exponents: Optional[List[Tuple[int, ...]]] = None

    @model_validator(mode="after")
    def _check(self) -> "DesignMatrix":
        if len(self.column_labels) != self.values.shape[1]:
            raise ShapeError(f"{len(self.column_labels)} labels for {self.values.shape[1]} columns")
        if len(set(self.column_labels)) != len(self.column_labels):
            raise ParameterError("design column labels must be unique")
        if self.exponents is not None and len(self.exponents) != self.values.shape[1]:
            raise ShapeError("one exponent tuple per column required")
        return self

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def q(self) -> int:
        return int(self.values.shape[1])

    def index(self, label: str) -> int:
        return self.column_labels.index(label)


class LeastSquaresFit(ArrayModel):
    """Least-squares coefficients, residuals U = y - Omega A and fitted values."""

    coefficients: Vector
    residuals: Vector
    fitted: Vector
    rank: int


class SandwichCovariance(ArrayModel):
    """Coefficient covariance matrix (squared standard errors on the diagonal)."""

    matrix: Matrix
    df_note: str

    @model_validator(mode="after")
    def _check(self) -> "SandwichCovariance":
        m = self.matrix
        scale = max(float(np.max(np.abs(m))), np.finfo(float).tiny) if m.size else 1.0
        if m.shape[0] != m.shape[1]:
            raise ShapeError("covariance must be square")
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-12 * scale:
            raise NumericError("covariance is not symmetric")
        if np.min(np.diag(m), initial=0.0) < -1e-12 * scale:
            raise NumericError("covariance has a negative variance")
        return self

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))


# ============ Distribution Models ============

class ErrorKind(str, Enum):
    NORMAL = "normal"
    GAUSSIAN_MIXTURE = "gmix"
    UNIFORM_MIXTURE = "umix"
    UNIFORM = "uniform"


class ErrorDistribution(BaseModel):
    """
    Error law with analytically known moments.

    normal(mean, sd); gmix(mu) = 0.5 N(mu, 1-mu^2) + 0.5 N(-mu, 1-mu^2);
    umix(a) = 0.5 U(-1, 1) + 0.5 U(-a, a); uniform(lo, hi).
    """

    model_config = ConfigDict(frozen=True)

    kind: ErrorKind = ErrorKind.NORMAL
    mean: float = 0.0
    sd: float = 1.0
    mu: float = 0.9
    a: float = UMIX_AUTO
    lo: float = -1.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _check(self) -> "ErrorDistribution":
        if self.kind is ErrorKind.NORMAL and not self.sd > 0:
            raise ParameterError(f"normal sd must be > 0, got {self.sd}")
        if self.kind is ErrorKind.GAUSSIAN_MIXTURE and not 0 < self.mu < 1:
            raise ParameterError(f"gmix mu must lie in (0, 1), got {self.mu}")
        if self.kind is ErrorKind.UNIFORM_MIXTURE and not self.a > 0:
            raise ParameterError(f"umix a must be > 0, got {self.a}")
        if self.kind is ErrorKind.UNIFORM and not self.lo < self.hi:
            raise ParameterError(f"uniform needs lo < hi, got ({self.lo}, {self.hi})")
        return self

    @classmethod
    def normal(cls, mean: float = 0.0, sd: float = 1.0) -> "ErrorDistribution":
        return cls(kind=ErrorKind.NORMAL, mean=mean, sd=sd)

    @classmethod
    def gmix(cls, mu: float = 0.9) -> "ErrorDistribution":
        return cls(kind=ErrorKind.GAUSSIAN_MIXTURE, mu=mu)

    @classmethod
    def umix(cls, a: float = UMIX_AUTO) -> "ErrorDistribution":
        return cls(kind=ErrorKind.UNIFORM_MIXTURE, a=a)

    @classmethod
    def uniform(cls, lo: float = -1.0, hi: float = 1.0) -> "ErrorDistribution":
        return cls(kind=ErrorKind.UNIFORM, lo=lo, hi=hi)

    @classmethod
    def parse(cls, text: str) -> "ErrorDistribution":
        """Parse ``normal(0,1)``, ``gmix(0.9)``, ``umix(auto)``, ``uniform(-1,1)``."""
        name, args, kwargs = parse_call(text)
        values = list(args) + list(kwargs.values())
        try:
            if name == "normal":
                return cls.normal(*[float(v) for v in values])
            if name == "gmix":
                return cls.gmix(*[float(v) for v in values])
            if name == "umix":
                if not values or values[0].strip().lower() == "auto":
                    return cls.umix()
                return cls.umix(float(values[0]))
            if name == "uniform":
                return cls.uniform(*[float(v) for v in values])
        except (TypeError, ValueError) as exc:
            raise ParameterError(f"bad distribution spec '{text}': {exc}") from exc
        raise ParameterError(f"unknown distribution '{name}'")

    def __str__(self) -> str:
        if self.kind is ErrorKind.NORMAL:
            return f"normal({self.mean!r},{self.sd!r})"
        if self.kind is ErrorKind.GAUSSIAN_MIXTURE:
            return f"gmix({self.mu!r})"
        if self.kind is ErrorKind.UNIFORM_MIXTURE:
            return "umix(auto)" if self.a == UMIX_AUTO else f"umix({self.a!r})"
        return f"uniform({self.lo!r},{self.hi!r})"


# ============ Nuisance Models ============

class LearnerKind(str, Enum):
    POLY_RIDGE = "poly"
    SPLINE_ADDITIVE = "spline"
    GBT = "gbt"
    MLP = "mlp"


_LEARNER_ALIASES = {
    "lr": "learning_rate",
    "lambda": "lam",
    "n_trees": "trees",
    "max_depth": "depth",
}

_LEARNER_FIELDS = {
    LearnerKind.POLY_RIDGE: ("degree", "lam"),
    LearnerKind.SPLINE_ADDITIVE: ("degree", "knots"),
    LearnerKind.GBT: ("trees", "depth", "learning_rate", "min_leaf"),
    LearnerKind.MLP: ("layers", "width", "epochs", "learning_rate", "batch"),
}

_LEARNER_SHORT = {"learning_rate": "lr", "lam": "lambda"}


class LearnerSpec(BaseModel):
    """Hyperparameters of a nuisance learner."""

    model_config = ConfigDict(frozen=True)

    kind: LearnerKind
    degree: int = 3
    lam: float = 0.0
    knots: int = 5
    trees: int = 300
    depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 20
    layers: int = 3
    width: int = 64
    epochs: int = 500
    batch: int = 64
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _kind_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict) and "learning_rate" not in data:
            kind = getattr(data.get("kind"), "value", data.get("kind"))
            if str(kind).lower() == LearnerKind.MLP.value:
                data = {**data, "learning_rate": 0.001}
        return data

    @model_validator(mode="after")
    def _check(self) -> "LearnerSpec":
        for name in ("degree", "knots", "trees", "depth", "min_leaf", "layers", "width", "epochs", "batch"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"learner hyperparameter '{name}' must be > 0")
        if not self.learning_rate > 0:
            raise ParameterError("learning rate must be > 0")
        if self.lam < 0:
            raise ParameterError("ridge lambda must be >= 0")
        check_seed(self.seed)
        return self

    @classmethod
    def parse(cls, text: str, seed: Optional[int] = None) -> "LearnerSpec":
        """Parse e.g. ``gbt(trees=300,depth=3,lr=0.1,min_leaf=20)``."""
        name, args, kwargs = parse_call(text)
        aliases = {"poly_ridge": "poly", "spline_additive": "spline", "gbm": "gbt", "nn": "mlp"}
        name = aliases.get(name, name)
        try:
            kind = LearnerKind(name)
        except ValueError as exc:
            raise ParameterError(f"unknown learner '{name}'") from exc
        if args:
            raise ParameterError(f"learner '{name}' takes keyword arguments only")
        fields: Dict[str, Any] = {"kind": kind}
        for key, value in kwargs.items():
            key = _LEARNER_ALIASES.get(key, key)
            if key not in cls.model_fields or key == "kind":
                raise ParameterError(f"unknown hyperparameter '{key}' for learner '{name}'")
            fields[key] = value
        if seed is not None and "seed" not in fields:
            fields["seed"] = seed
        try:
            return cls(**fields)
        except ValueError as exc:
            raise ParameterError(f"bad learner spec '{text}': {exc}") from exc

    def __str__(self) -> str:
        parts = [f"{_LEARNER_SHORT.get(f, f)}={getattr(self, f)!r}" for f in _LEARNER_FIELDS[self.kind]]
        return f"{self.kind.value}({','.join(parts)})"

    def with_seed(self, seed: int) -> "LearnerSpec":
        return self.model_copy(update={"seed": check_seed(seed)})


class CrossFitTarget(str, Enum):
    TREATMENT = "treatment"
    OUTCOME = "outcome"


class CrossFitResult(ArrayModel):
    """Out-of-fold nuisance predictions and residuals in original row order."""

    predictions: Vector
    residuals: Vector
    fold_assignment: Optional[FoldAssignment] = None
    fit_quality: Dict[str, float]
    in_sample: bool = False


# ============ Diagnostic Models ============

class MomentProfile(ArrayModel):
    """Raw sample moments and the Assumption-2 deviation ladder."""

    moments: Vector
    deviations: Vector
    std_errors: Vector
    flags: List[bool]
    n: int
    z_threshold: float

    @model_validator(mode="after")
    def _check(self) -> "MomentProfile":
        if self.moments[0] != 1.0 or not self.moments[2] > 0:
            raise NumericError("moment profile needs moments[0] = 1 and moments[2] > 0")
        return self


class WeightRow(BaseModel):
    """One (m, p) term of the R-OLS weight decomposition."""

    m: int
    p: int
    binom: int
    weight: float
    ape_component: float
    component_direct: float


class WeightTable(BaseModel):
    rows: List[WeightRow]
    reconstructed_beta: float
    direct_beta: float
    sample_ape: float


class IvCheck(BaseModel):
    """A single IV moment-condition estimate."""

    family: Literal["IV_MC1", "IV_MC2"]
    m: Optional[int] = None
    p: Optional[int] = None
    condition: str
    estimate: float
    std_error: float
    passed: bool


class IvMomentReport(BaseModel):
    scenario: str
    checks: List[IvCheck]
    critical_value: float
    mc1_satisfied: bool
    mc2_satisfied: bool
    satisfied: bool


# ============ Inference Models ============

class BootstrapMethod(str, Enum):
    PERCENTILE = "PERCENTILE"
    NORMAL_APPROX = "NORMAL_APPROX"


class BootstrapResult(ArrayModel):
    """Bootstrap distribution of an estimator."""

    estimates: Vector
    point: float
    se: float
    ci_low: float
    ci_high: float
    method: BootstrapMethod
    alpha: float
    seed: int
    retried: int = 0
    skipped: int = 0


# ============ Simulation Models ============

class Family(str, Enum):
    ADDITIVE = "additive"
    SIMPLE = "simple"
    COMPLEX = "complex"
    FIG1 = "fig1"


class DgpSpec(BaseModel):
    """One synthetic design: Y-family, X-family, polynomial order and nu-law."""

    model_config = ConfigDict(frozen=True)

    y_family: Family
    x_family: Family
    M: int = 1
    error_dist: ErrorDistribution = Field(default_factory=ErrorDistribution.normal)
    n: int = 1000

    @model_validator(mode="after")
    def _check(self) -> "DgpSpec":
        if (self.y_family is Family.FIG1) != (self.x_family is Family.FIG1):
            raise ParameterError("the fig1 design pairs its own Y- and X-families")
        if self.M < 1:
            raise ParameterError(f"M must be >= 1, got {self.M}")
        if self.y_family is Family.ADDITIVE and self.M != 1:
            raise ParameterError("the additive Y-family is linear in X (M = 1)")
        if self.y_family is Family.FIG1 and self.M != 2:
            raise ParameterError("the fig1 Y-family is quadratic in X (M = 2)")
        if self.n < 2:
            raise ParameterError(f"n must be >= 2, got {self.n}")
        return self

    @property
    def k(self) -> int:
        return 1 if self.x_family is Family.FIG1 else 2

    def label(self) -> str:
        return f"Y={self.y_family.value}|X={self.x_family.value}|nu={self.error_dist}"


class SyntheticDraw(ArrayModel):
    """A DGP realisation with every latent component exposed."""

    dataset: Dataset
    nu_true: Vector
    r_of_z: Vector
    g_components: Matrix
    ape_contrib: Vector
    epsilon: Vector


class RForm(str, Enum):
    LINEAR = "w"
    QUADRATIC = "w+w2"
    SCALED = "w*rz"


class GFamily(str, Enum):
    CONSTANT = "constant"
    SIMPLE = "simple"


class IvDgpSpec(BaseModel):
    """Synthetic IV design: X = r(W, Z) + zeta, Y = sum_m X^m g_m(Z) + eps."""

    model_config = ConfigDict(frozen=True)

    r_form: RForm = RForm.LINEAR
    g_family: GFamily = GFamily.SIMPLE
    M: int = 1
    strength: float = 1.0
    rho: float = 0.5
    instrument: ErrorDistribution = Field(default_factory=ErrorDistribution.normal)
    n: int = 10000

    @model_validator(mode="after")
    def _check(self) -> "IvDgpSpec":
        if self.M < 1:
            raise ParameterError(f"M must be >= 1, got {self.M}")
        if not -1 < self.rho < 1:
            raise ParameterError("rho must lie in (-1, 1)")
        if self.strength == 0:
            raise ParameterError("instrument strength must be non-zero")
        return self

    def scenario(self) -> str:
        linear = "linear" if self.r_form is RForm.LINEAR else "non-linear"
        arg = "r(W_i, Z_i)" if self.r_form is RForm.SCALED else "r(W_i)"
        order = "M=1" if self.M == 1 else "M>1"
        return f"{order}, {linear} {arg}"


class IvDraw(ArrayModel):
    dataset: Dataset
    w: Vector
    zeta: Vector
    r_of_wz: Vector
    g_components: Matrix
    ape_contrib: Vector
    epsilon: Vector


class EstimatorName(str, Enum):
    ROLS_KNOWN = "rols_known"
    ROLS_ML = "rols_ml"
    OLS_FWL = "ols_fwl"
    DML = "dml"
    SIMPLE_OLS = "simple_ols"
    INTERACTED_OLS = "interacted_ols"
    PL_SPLINE = "pl_spline"
    IV = "iv"


class EstimatorSpec(BaseModel):
    """A named, fully parameterised estimator."""

    model_config = ConfigDict(frozen=True)

    name: EstimatorName
    label: str = ""
    learner: Optional[LearnerSpec] = None
    learner_l: Optional[LearnerSpec] = None
    folds: int = 5
    degree: int = 3
    spline_degree: int = 3
    knots: int = 5
    center_nu: bool = False
    in_sample: bool = False

    @model_validator(mode="after")
    def _check(self) -> "EstimatorSpec":
        if self.name in (EstimatorName.ROLS_ML, EstimatorName.DML) and self.learner is None:
            raise ParameterError(f"estimator '{self.name.value}' needs a learner")
        if self.folds < 2:
            raise ParameterError("folds must be >= 2")
        if not self.label:
            object.__setattr__(self, "label", self.name.value)
        return self

    @classmethod
    def parse(cls, text: str, label: Optional[str] = None) -> "EstimatorSpec":
        """Parse e.g. ``rols_ml(learner=gbt(trees=200),folds=5)``."""
        name, args, kwargs = parse_call(text)
        aliases = {"rols": "rols_known", "dml_plr": "dml", "pl_gam": "pl_spline", "iv_ape": "iv"}
        name = aliases.get(name, name)
        try:
            estimator = EstimatorName(name)
        except ValueError as exc:
            raise ParameterError(f"unknown estimator '{name}'") from exc
        if args:
            raise ParameterError(f"estimator '{name}' takes keyword arguments only")
        fields: Dict[str, Any] = {"name": estimator, "label": label or ""}
        for key, value in kwargs.items():
            key = {"learner_r": "learner"}.get(key, key)
            if key in ("learner", "learner_l"):
                fields[key] = LearnerSpec.parse(value)
            elif key in ("center_nu", "in_sample"):
                fields[key] = parse_bool(value)
            elif key in ("folds", "degree", "spline_degree", "knots"):
                try:
                    fields[key] = int(value)
                except ValueError as exc:
                    raise ParameterError(f"option '{key}' of '{name}' must be an integer, got '{value}'") from exc
            else:
                raise ParameterError(f"unknown option '{key}' for estimator '{name}'")
        if estimator is EstimatorName.DML and "learner_l" not in fields and "learner" in fields:
            fields["learner_l"] = fields["learner"]
        return cls(**fields)

    def __str__(self) -> str:
        options: List[str] = []
        if self.learner is not None:
            options.append(f"learner={self.learner}")
        if self.name is EstimatorName.DML and self.learner_l is not None:
            options.append(f"learner_l={self.learner_l}")
        if self.name in (EstimatorName.ROLS_ML, EstimatorName.DML):
            options.append(f"folds={self.folds}")
        if self.name is EstimatorName.INTERACTED_OLS:
            options.append(f"degree={self.degree}")
        if self.name is EstimatorName.PL_SPLINE:
            options.append(f"spline_degree={self.spline_degree},knots={self.knots}")
        if self.center_nu:
            options.append("center_nu=true")
        if self.in_sample:
            options.append("in_sample=true")
        return f"{self.name.value}({','.join(options)})" if options else self.name.value


class SimCell(BaseModel):
    """Monte Carlo summary of one estimator on one design."""

    dgp: str
    estimator: str
    n: int
    M: int
    mean: float
    sd: float
    mse: float
    reps: int
    failures: int
    true_ape: float
    true_ape_se: float


class SimReport(BaseModel):
    cells: List[SimCell]
    true_ape: Dict[str, float]
    config: Dict[str, Any]
    replications: Dict[str, List[Optional[float]]] = Field(default_factory=dict)

    def cell(self, estimator: str, n: int, M: int, dgp: Optional[str] = None) -> SimCell:
        for cell in self.cells:
            if cell.estimator == estimator and cell.n == n and cell.M == M and (dgp is None or cell.dgp == dgp):
                return cell
        raise KeyError((estimator, n, M, dgp))


class Figure1Record(BaseModel):
    replication: int
    epochs_r: int
    epochs_l: int
    corr_nu_z: float
    rols_estimate: float
    dml_estimate: float
    dml_se: float


class SlopeFit(BaseModel):
    """Least-squares line of an estimate on corr(nu_hat, Z) with HC0 SE."""

    estimator: str
    intercept: float
    slope: float
    std_error: float
    z: float


class GridConfig(BaseModel):
    """A parsed simulation grid: expanded designs times estimators."""

    name: str = "grid"
    reps: int = 500
    seed: int = 0
    oracle_n: int = 1_000_000
    specs: List[DgpSpec]
    estimators: List[EstimatorSpec]
    blocks: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "GridConfig":
        if self.reps < 2:
            raise ParameterError(f"reps must be >= 2, got {self.reps}")
        if not self.specs or not self.estimators:
            raise ParameterError("a grid needs at least one design and one estimator")
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ParameterError(f"estimator labels must be unique, got {labels}")
        check_seed(self.seed)
        return self


class Figure1Config(BaseModel):
    name: str = "figure1"
    reps: int = 200
    n: int = 1000
    epochs_range: Tuple[int, int] = (50, 200)
    folds: int = 4
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "Figure1Config":
        lo, hi = self.epochs_range
        if not 0 < lo <= hi:
            raise ParameterError(f"epoch range must satisfy 0 < lo <= hi, got {self.epochs_range}")
        check_seed(self.seed)
        return self


# ============ Run Models ============

class RunCommand(str, Enum):
    ESTIMATE = "estimate"
    SIMULATE = "simulate"
    DIAGNOSE = "diagnose"
    FIGURE1 = "figure1"


class RunConfig(BaseModel):
    """Resolved configuration of one CLI run (echoed into every report)."""

    command: RunCommand
    seed: int
    workers: int = 1
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        check_seed(self.seed)
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        return self


class RunLog(BaseModel):
    """Log entry for each CLI run."""

    timestamp: datetime = Field(default_factory=datetime.now)
    run_id: str = Field(default_factory=lambda: f"run_{uuid.uuid4().hex[:8]}")
    command: str
    seed: int
    status: Literal["ok", "error"]
    exit_code: int = 0
    duration_seconds: Optional[float] = None
    outputs: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    message: Optional[str] = None
