"""App models package."""
from app.models.errors import (
    ApeError,
    ParameterError,
    DataError,
    NumericError,
)
from app.models.schemas import (
    ColumnRoles,
    Dataset,
    FoldAssignment,
    Method,
    ApeEstimate,
    DesignMatrix,
    LeastSquaresFit,
    SandwichCovariance,
    ErrorDistribution,
    LearnerSpec,
    CrossFitResult,
    MomentProfile,
    WeightTable,
    IvMomentReport,
    BootstrapResult,
    DgpSpec,
    IvDgpSpec,
    EstimatorSpec,
    SimReport,
    RunConfig,
    RunLog,
)

__all__ = [
    "ApeError",
    "ParameterError",
    "DataError",
    "NumericError",
    "ColumnRoles",
    "Dataset",
    "FoldAssignment",
    "Method",
    "ApeEstimate",
    "DesignMatrix",
    "LeastSquaresFit",
    "SandwichCovariance",
    "ErrorDistribution",
    "LearnerSpec",
    "CrossFitResult",
    "MomentProfile",
    "WeightTable",
    "IvMomentReport",
    "BootstrapResult",
    "DgpSpec",
    "IvDgpSpec",
    "EstimatorSpec",
    "SimReport",
    "RunConfig",
    "RunLog",
]
