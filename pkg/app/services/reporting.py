"""
Report writers: CSV with an embedded configuration header, JSON, and aligned text.

Report bodies never contain timestamps; those live in the run log.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.models.schemas import (
    ApeEstimate,
    BootstrapResult,
    Figure1Record,
    IvMomentReport,
    MomentProfile,
    SimReport,
    SlopeFit,
    WeightTable,
)
from app.utils.helpers import format_float

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


def _header(config: Mapping[str, Any]) -> str:
    lines = [f"# {key} = {json.dumps(config[key], sort_keys=True, default=str)}" for key in sorted(config)]
    return "".join(line + "\n" for line in lines)


def write_csv_report(frame: pd.DataFrame, path: Union[str, Path], config: Mapping[str, Any]) -> Path:
    """Write ``frame`` preceded by one ``# key = value`` line per config entry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    path.write_text(_header(config) + body, encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def read_csv_report(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_json_report(payload: Union[BaseModel, Dict[str, Any]], path: Union[str, Path],
                      config: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else dict(payload)
    document = {"config": dict(config), "result": body}
    path.write_text(json.dumps(document, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def text_table(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")


# ============ Estimates ============

def estimate_frame(estimate: ApeEstimate) -> pd.DataFrame:
    row: Dict[str, Any] = {
        "method": estimate.method.value,
        "point": estimate.point,
        "std_error": estimate.std_error,
        "ci_low": estimate.ci_low,
        "ci_high": estimate.ci_high,
        "n_used": estimate.n_used,
    }
    row.update({key: estimate.diagnostics[key] for key in sorted(estimate.diagnostics)})
    return pd.DataFrame([row])


def estimate_text(estimate: ApeEstimate, bootstrap: Optional[BootstrapResult] = None) -> str:
    level = "95%" if bootstrap is None else f"{100 * (1 - bootstrap.alpha):g}%"
    lines = [
        f"method      {estimate.method.value}",
        f"n           {estimate.n_used}",
        f"APE         {format_float(estimate.point)}",
        f"std. error  {format_float(estimate.std_error)}",
        f"CI          [{format_float(estimate.ci_low)}, {format_float(estimate.ci_high)}]",
    ]
    if bootstrap is not None:
        lines += [
            f"boot se     {format_float(bootstrap.se)}  (B={bootstrap.estimates.size}, skipped={bootstrap.skipped})",
            f"boot {level:<6} [{format_float(bootstrap.ci_low)}, {format_float(bootstrap.ci_high)}]"
            f"  ({bootstrap.method.value.lower()})",
        ]
    for key in sorted(estimate.diagnostics):
        lines.append(f"{key:<11} {format_float(estimate.diagnostics[key])}")
    return "\n".join(lines)


def bootstrap_frame(result: BootstrapResult) -> pd.DataFrame:
    return pd.DataFrame({"resample": np.arange(result.estimates.size), "estimate": result.estimates})


# ============ Diagnostics ============

def moment_frame(profile: MomentProfile) -> pd.DataFrame:
    """Moment ladder: one row per p with the raw moment and the deviation check."""
    p = np.arange(profile.deviations.size)
    return pd.DataFrame({
        "p": p,
        "moment_p": profile.moments[: p.size],
        "moment_p_plus_2": profile.moments[2 : p.size + 2],
        "deviation": profile.deviations,
        "std_error": profile.std_errors,
        "flagged": profile.flags,
    })


def decomposition_frame(table: WeightTable) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in table.rows])


def iv_frame(report: IvMomentReport) -> pd.DataFrame:
    return pd.DataFrame([check.model_dump() for check in report.checks])


# ============ Simulation ============

def sim_frame(report: SimReport) -> pd.DataFrame:
    columns = ["dgp", "estimator", "M", "n", "mean", "sd", "mse", "reps", "failures", "true_ape", "true_ape_se"]
    return pd.DataFrame([cell.model_dump() for cell in report.cells])[columns]


def replications_frame(report: SimReport) -> pd.DataFrame:
    """Long format: one row per (cell, replication); failed replications are empty."""
    rows: List[Dict[str, Any]] = []
    for key, values in report.replications.items():
        dgp, estimator, n, M = key.rsplit("|", 3)
        for rep, value in enumerate(values):
            rows.append({"dgp": dgp, "estimator": estimator, "n": int(n), "M": int(M),
                         "replication": rep, "estimate": value})
    return pd.DataFrame(rows)


def _cell_text(mean: float, sd: float, mse: float) -> str:
    if not np.isfinite(mean):
        return "failed"
    return f"{mean:.2f} ({sd:.2f}) [{mse:.2f}]"


def grid_tables(report: SimReport, blocks: Optional[Mapping[str, str]] = None) -> str:
    """
    One text table per design: rows are estimators, columns are (M, N),
    each cell is ``mean (sd) [mse]``.
    """
    frame = sim_frame(report)
    out: List[str] = []
    for dgp, part in frame.groupby("dgp", sort=False):
        title = f"{blocks.get(dgp, dgp)}: {dgp}" if blocks else dgp
        header_parts = []
        for M, block in part.groupby("M", sort=True):
            header_parts.append(f"M={M} with APE={block['true_ape'].iloc[0]:.2f}")
        cells = part.assign(
            column=[f"M={m} N={n}" for m, n in zip(part["M"], part["n"])],
            cell=[_cell_text(a, b, c) for a, b, c in zip(part["mean"], part["sd"], part["mse"])],
        )
        order = list(dict.fromkeys(cells.sort_values(["M", "n"], kind="stable")["column"]))
        table = cells.pivot(index="estimator", columns="column", values="cell")[order]
        table = table.reindex(list(dict.fromkeys(part["estimator"])))
        out.append(title)
        out.append("; ".join(header_parts))
        out.append(table.to_string())
        out.append("")
    return "\n".join(out)


# ============ Nuisance-Quality Experiment ============

def figure1_frame(records: Sequence[Figure1Record]) -> pd.DataFrame:
    columns = list(Figure1Record.model_fields)
    return pd.DataFrame([r.model_dump() for r in records], columns=columns)


def slopes_frame(fits: Sequence[SlopeFit]) -> pd.DataFrame:
    return pd.DataFrame([fit.model_dump() for fit in fits])
