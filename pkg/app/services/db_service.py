"""
Database service for the optional run store (runs, estimates, simulation cells).
"""
import json
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from app.models.database import get_db_session, init_db, RunRecord, EstimateRecord, SimCellRecord
from app.models.schemas import ApeEstimate, RunConfig, SimReport


class DatabaseService:
    """Handle all run-store operations."""

    def __init__(self, url: Optional[str] = None):
        self.url = url
        if url and url.startswith("sqlite:///"):
            Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
        init_db(url)

    def create_run(self, run_id: str, config: RunConfig) -> RunRecord:
        """Register a run before it starts."""
        db = get_db_session(self.url)
        try:
            record = RunRecord(
                id=run_id,
                command=config.command.value,
                seed=str(config.seed),
                status="running",
                config_json=config.model_dump_json(),
            )
            db.add(record)
            db.commit()
            return record
        finally:
            db.close()

    def finish_run(self, run_id: str, status: str) -> None:
        """Mark a run as finished with ``ok`` or ``error``."""
        db = get_db_session(self.url)
        try:
            record = db.query(RunRecord).filter(RunRecord.id == run_id).first()
            if record:
                record.status = status
                record.finished_at = datetime.utcnow()
                db.commit()
        finally:
            db.close()

    def add_estimate(self, run_id: str, estimate: ApeEstimate) -> EstimateRecord:
        db = get_db_session(self.url)
        try:
            record = EstimateRecord(
                run_id=run_id,
                method=estimate.method.value,
                point=estimate.point,
                std_error=estimate.std_error,
                ci_low=estimate.ci_low,
                ci_high=estimate.ci_high,
                n_used=estimate.n_used,
                diagnostics_json=json.dumps(estimate.diagnostics),
            )
            db.add(record)
            db.commit()
            return record
        finally:
            db.close()

    def add_sim_report(self, run_id: str, report: SimReport) -> int:
        """Store every cell of ``report``; returns the number of rows written."""
        db = get_db_session(self.url)
        try:
            for cell in report.cells:
                db.add(SimCellRecord(
                    run_id=run_id,
                    dgp=cell.dgp,
                    estimator=cell.estimator,
                    n=cell.n,
                    order=cell.M,
                    mean=cell.mean,
                    sd=cell.sd,
                    mse=cell.mse,
                    reps=cell.reps,
                    failures=cell.failures,
                    true_ape=cell.true_ape,
                ))
            db.commit()
            return len(report.cells)
        finally:
            db.close()

    def get_run(self, run_id: str) -> Optional[RunRecord]:
        db = get_db_session(self.url)
        try:
            return db.query(RunRecord).filter(RunRecord.id == run_id).first()
        finally:
            db.close()

    def list_runs(self, command: Optional[str] = None) -> List[RunRecord]:
        """All stored runs, oldest first."""
        db = get_db_session(self.url)
        try:
            query = db.query(RunRecord)
            if command:
                query = query.filter(RunRecord.command == command)
            return query.order_by(RunRecord.created_at).all()
        finally:
            db.close()

    def get_estimates(self, run_id: str) -> List[EstimateRecord]:
        db = get_db_session(self.url)
        try:
            return db.query(EstimateRecord).filter(EstimateRecord.run_id == run_id).all()
        finally:
            db.close()

    def get_sim_cells(self, run_id: str) -> List[SimCellRecord]:
        db = get_db_session(self.url)
        try:
            return db.query(SimCellRecord).filter(SimCellRecord.run_id == run_id).all()
        finally:
            db.close()
