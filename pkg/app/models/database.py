"""
Database models for the optional APE run store
"""
from datetime import datetime
from typing import Optional

from sqlalchemy import create_engine, Column, Integer, String, Float, DateTime, ForeignKey, Text
from sqlalchemy.orm import declarative_base, sessionmaker, relationship

from config.settings import settings

Base = declarative_base()


class RunRecord(Base):
    """One CLI invocation."""
    __tablename__ = 'runs'

    id = Column(String(36), primary_key=True)  # run_id
    command = Column(String(20), nullable=False)
    seed = Column(String(20), nullable=False)  # uint64 does not fit a signed INTEGER
    status = Column(String(10), default='running')  # running, ok, error
    config_json = Column(Text, nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)

    estimates = relationship("EstimateRecord", back_populates="run", cascade="all, delete-orphan")
    cells = relationship("SimCellRecord", back_populates="run", cascade="all, delete-orphan")


class EstimateRecord(Base):
    """A single ApeEstimate produced by a run."""
    __tablename__ = 'estimates'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(36), ForeignKey('runs.id'), nullable=False)
    method = Column(String(20), nullable=False)
    point = Column(Float, nullable=False)
    std_error = Column(Float, nullable=True)
    ci_low = Column(Float, nullable=True)
    ci_high = Column(Float, nullable=True)
    n_used = Column(Integer, nullable=False)
    diagnostics_json = Column(Text, nullable=True)

    run = relationship("RunRecord", back_populates="estimates")


class SimCellRecord(Base):
    """One (dgp, estimator, n, M) cell of a simulation report."""
    __tablename__ = 'sim_cells'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(36), ForeignKey('runs.id'), nullable=False)
    dgp = Column(String(200), nullable=False)
    estimator = Column(String(100), nullable=False)
    n = Column(Integer, nullable=False)
    order = Column(Integer, nullable=False)
    mean = Column(Float, nullable=True)
    sd = Column(Float, nullable=True)
    mse = Column(Float, nullable=True)
    reps = Column(Integer, nullable=False)
    failures = Column(Integer, default=0)
    true_ape = Column(Float, nullable=False)

    run = relationship("RunRecord", back_populates="cells")


# Database initialization
def get_engine(url: Optional[str] = None):
    """Get database engine"""
    return create_engine(url or settings.database_url(), echo=False)


def init_db(url: Optional[str] = None):
    """Initialize database tables"""
    engine = get_engine(url)
    Base.metadata.create_all(engine)
    return engine


def get_db_session(url: Optional[str] = None):
    """Get database session"""
    SessionLocal = sessionmaker(bind=get_engine(url), expire_on_commit=False)
    return SessionLocal()
