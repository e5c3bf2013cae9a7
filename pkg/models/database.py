"""
SQLAlchemy models for the run registry.

A ScenarioRun owns its sweep points and invariant results; verification
matrices are stored as one VerificationRun with its rows.
"""

from datetime import datetime
from sqlalchemy import Column, String, Integer, Float, DateTime, Boolean, Text, ForeignKey
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class ScenarioRun(Base):
    """
    One execution of a scenario.

    ``config_json`` is the merged configuration that produced the outputs, so
    a run can be reproduced from the registry alone.
    """
    __tablename__ = 'scenario_runs'

    id = Column(String, primary_key=True)  # UUID
    kind = Column(String, nullable=False)  # identity | epsilon_sweep | blend
    profile = Column(String, nullable=False)
    resolution = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    config_json = Column(Text, nullable=False)
    out_dir = Column(String, nullable=True)
    status = Column(String, nullable=False, default="running")  # running | passed | failed
    failed_invariant = Column(String, nullable=True)
    started_at = Column(DateTime, nullable=False, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)

    points = relationship("SweepPoint", back_populates="run", cascade="all, delete-orphan",
                          order_by="SweepPoint.position")
    invariants = relationship("InvariantResult", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<ScenarioRun(id={self.id}, kind={self.kind}, status={self.status})>"


class SweepPoint(Base):
    """Functionals measured at one sweep parameter value."""
    __tablename__ = 'sweep_points'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String, ForeignKey('scenario_runs.id'), nullable=False)
    position = Column(Integer, nullable=False)
    parameter = Column(Float, nullable=False)
    carleson = Column(Float, nullable=True)
    carleson_sigma = Column(Float, nullable=True)
    conical_sup = Column(Float, nullable=True)
    cme = Column(Float, nullable=True)
    s_vs_n = Column(Float, nullable=True)
    rh_json = Column(Text, nullable=True)  # {"p": constant}

    run = relationship("ScenarioRun", back_populates="points")

    def __repr__(self):
        return f"<SweepPoint(run={self.run_id}, parameter={self.parameter})>"


class InvariantResult(Base):
    __tablename__ = 'invariant_results'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String, ForeignKey('scenario_runs.id'), nullable=False)
    name = Column(String, nullable=False)
    passed = Column(Boolean, nullable=False)
    detail = Column(Text, nullable=True)

    run = relationship("ScenarioRun", back_populates="invariants")

    def __repr__(self):
        return f"<InvariantResult(name={self.name}, passed={self.passed})>"


class VerificationRun(Base):
    """A pass/fail matrix; ``matrix_json`` maps invariant rows to per-domain cells."""
    __tablename__ = 'verification_runs'

    id = Column(String, primary_key=True)  # UUID
    profiles = Column(String, nullable=False)  # comma separated
    resolution = Column(Integer, nullable=False)
    matrix_json = Column(Text, nullable=False)
    passed = Column(Boolean, nullable=False)
    created_at = Column(DateTime, nullable=False, default=datetime.utcnow)

    def __repr__(self):
        return f"<VerificationRun(id={self.id}, passed={self.passed})>"
