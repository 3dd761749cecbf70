"""
Sample ingestion and fold assignment.
"""
import logging
from pathlib import Path
from typing import Mapping, Union

import numpy as np
import pandas as pd

from app.models.errors import DataError, ParameterError, ParseError, RoleError, SizeError
from app.models.schemas import ColumnRoles, Dataset, FoldAssignment
from app.utils.helpers import check_seed, make_rng

logger = logging.getLogger(__name__)

RolesLike = Union[ColumnRoles, Mapping[str, str]]


def _as_roles(roles: RolesLike) -> ColumnRoles:
    if isinstance(roles, ColumnRoles):
        return roles
    return ColumnRoles.from_mapping(dict(roles))


def _numeric_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    column = frame[name]
    if not pd.api.types.is_numeric_dtype(column):
        coerced = pd.to_numeric(column, errors="coerce")
        bad = np.flatnonzero(coerced.isna().to_numpy())
        row = int(bad[0]) if bad.size else 0
        raise ParseError(
            f"column '{name}', data row {row + 1} (line {row + 2}): "
            f"cannot parse '{column.iloc[row]}' as a number",
            row=row,
            column=name,
        )
    values = column.to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise ParseError(
            f"column '{name}', data row {row + 1} (line {row + 2}): non-finite value",
            row=row,
            column=name,
        )
    return values


def load_csv(path: Union[str, Path], roles: RolesLike) -> Dataset:
    """
    Read a headed CSV into a validated Dataset.

    Args:
        path: CSV file with a header row
        roles: ColumnRoles or a ``{column: role}`` mapping

    Returns:
        Dataset with rows in file order
    """
    roles = _as_roles(roles)
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise SizeError(f"data file is empty: {path}") from exc
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV {path}: {exc}") from exc

    missing = [name for name in roles.columns() if name not in frame.columns]
    if missing:
        raise RoleError(f"columns not found in {path.name}: {', '.join(missing)}")
    if len(frame) < 2:
        raise SizeError(f"{path.name} has {len(frame)} data rows, at least 2 required")

    columns = {name: _numeric_column(frame, name) for name in roles.columns()}
    z = np.column_stack([columns[c] for c in roles.controls]) if roles.controls else None
    dataset = Dataset(
        y=columns[roles.outcome],
        x=columns[roles.treatment],
        z=z,
        w=columns[roles.instrument] if roles.instrument else None,
        nu_known=columns[roles.nu_known] if roles.nu_known else None,
        roles=roles,
    )
    logger.info("loaded %s: n=%d, K=%d", path.name, dataset.n, dataset.k)
    return dataset


def write_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write ``dataset`` so that ``load_csv`` with the same roles restores it exactly."""
    roles = dataset.roles
    data = {roles.outcome: dataset.y, roles.treatment: dataset.x}
    for k, name in enumerate(roles.controls):
        data[name] = dataset.z[:, k]
    if roles.instrument and dataset.w is not None:
        data[roles.instrument] = dataset.w
    if roles.nu_known and dataset.nu_known is not None:
        data[roles.nu_known] = dataset.nu_known

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(data).to_csv(path, index=False, float_format="%.17g")
    return path


def make_folds(n: int, folds: int, seed: int) -> FoldAssignment:
    """
    Deterministic pseudo-random partition of ``range(n)`` into ``folds`` folds.

    A Philox permutation is dealt round-robin, so fold sizes differ by at most one.
    """
    if folds < 2 or folds > n:
        raise ParameterError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    perm = make_rng(check_seed(seed)).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % folds
    return FoldAssignment(fold_of=fold_of, folds=folds, seed=seed)
