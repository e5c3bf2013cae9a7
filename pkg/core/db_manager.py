"""
Run registry for the elliptic measure laboratory.

This module provides the RunRegistry class which records scenario runs, their
sweep points and invariant results, and verification matrices in SQLite.
"""

import json
import logging
import uuid
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from sqlalchemy import create_engine, event
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker, Session

from core.error_handler import StorageError
from models.database import Base, ScenarioRun, SweepPoint, InvariantResult, VerificationRun


logger = logging.getLogger(__name__)


class RunRegistry:
    """
    Stores scenario runs and verification matrices.

    Timestamps live only here; report files written by the runner carry none.
    """

    def __init__(self, db_path: Path):
        """
        Args:
            db_path: Path to the SQLite database file
        """
        self.db_path = Path(db_path)
        self.engine = None
        self.SessionLocal = None

    def initialize_database(self):
        """
        Create the schema if it doesn't exist and set up the session factory.

        Raises:
            StorageError: If the database cannot be opened
        """
        try:
            self.db_path.parent.mkdir(parents=True, exist_ok=True)
            self.engine = create_engine(
                f"sqlite:///{self.db_path}",
                echo=False,
                connect_args={"check_same_thread": False},
            )

            @event.listens_for(self.engine, "connect")
            def set_sqlite_pragma(dbapi_conn, connection_record):
                cursor = dbapi_conn.cursor()
                cursor.execute("PRAGMA foreign_keys=ON")
                cursor.close()

            Base.metadata.create_all(self.engine)
        except (OSError, SQLAlchemyError) as e:
            raise StorageError(f"Cannot open run registry at {self.db_path}: {e}") from e
        self.SessionLocal = sessionmaker(bind=self.engine, expire_on_commit=False)
        logger.debug(f"Run registry ready at {self.db_path}")

    @contextmanager
    def get_session(self) -> Session:
        """
        Context manager for database sessions with automatic rollback on error.

        Example:
            with registry.get_session() as session:
                session.add(run)
        """
        if self.SessionLocal is None:
            raise StorageError("Run registry used before initialize_database()")
        session = self.SessionLocal()
        try:
            yield session
            session.commit()
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

    # ------------------------------------------------------------------
    # Scenario runs
    # ------------------------------------------------------------------

    def record_run(self, kind: str, profile: str, resolution: int, seed: int,
                   config: Dict[str, Any], out_dir: Optional[str] = None) -> str:
        """Open a run in the ``running`` state and return its id."""
        run_id = str(uuid.uuid4())
        with self.get_session() as session:
            session.add(ScenarioRun(
                id=run_id, kind=kind, profile=profile, resolution=resolution, seed=seed,
                config_json=json.dumps(config, sort_keys=True, default=str), out_dir=out_dir,
                status="running",
            ))
        logger.info(f"Recorded run {run_id} ({kind}, {profile}, resolution {resolution})")
        return run_id

    def record_sweep_point(self, run_id: str, position: int, parameter: float,
                           values: Dict[str, Any]) -> None:
        """
        Raises:
            StorageError: If the run does not exist
        """
        with self.get_session() as session:
            if session.get(ScenarioRun, run_id) is None:
                raise StorageError(f"Unknown run {run_id}")
            session.add(SweepPoint(
                run_id=run_id, position=position, parameter=float(parameter),
                carleson=values.get("carleson"),
                carleson_sigma=values.get("carleson_sigma"),
                conical_sup=values.get("conical_sup"),
                cme=values.get("cme"),
                s_vs_n=values.get("s_vs_n"),
                rh_json=json.dumps(values.get("rh", {}), sort_keys=True),
            ))

    def finish_run(self, run_id: str, invariants: Dict[str, bool],
                   details: Optional[Dict[str, str]] = None) -> ScenarioRun:
        """
        Store invariant outcomes and close the run as passed or failed.

        Raises:
            StorageError: If the run does not exist
        """
        details = details or {}
        with self.get_session() as session:
            run = session.get(ScenarioRun, run_id)
            if run is None:
                raise StorageError(f"Unknown run {run_id}")
            failed = [name for name, ok in invariants.items() if not ok]
            for name, ok in invariants.items():
                session.add(InvariantResult(run_id=run_id, name=name, passed=bool(ok),
                                            detail=details.get(name)))
            run.status = "failed" if failed else "passed"
            run.failed_invariant = failed[0] if failed else None
            run.finished_at = datetime.utcnow()
            session.flush()
            session.expunge(run)
        logger.info(f"Run {run_id} finished: {run.status}")
        return run

    def list_runs(self, limit: int = 20) -> List[ScenarioRun]:
        """Most recent runs first."""
        with self.get_session() as session:
            runs = (
                session.query(ScenarioRun)
                .order_by(ScenarioRun.started_at.desc())
                .limit(limit)
                .all()
            )
            session.expunge_all()
            return runs

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        """Run with its points and invariant results as plain data."""
        with self.get_session() as session:
            run = session.get(ScenarioRun, run_id)
            if run is None:
                return None
            return {
                "id": run.id,
                "kind": run.kind,
                "profile": run.profile,
                "resolution": run.resolution,
                "seed": run.seed,
                "status": run.status,
                "failed_invariant": run.failed_invariant,
                "config": json.loads(run.config_json),
                "points": [
                    {"position": p.position, "parameter": p.parameter, "carleson": p.carleson,
                     "carleson_sigma": p.carleson_sigma, "conical_sup": p.conical_sup,
                     "cme": p.cme, "s_vs_n": p.s_vs_n, "rh": json.loads(p.rh_json or "{}")}
                    for p in run.points
                ],
                "invariants": {i.name: i.passed for i in run.invariants},
            }

    # ------------------------------------------------------------------
    # Verification
    # ------------------------------------------------------------------

    def record_verification(self, profiles: List[str], resolution: int,
                            matrix: Dict[str, Dict[str, Optional[bool]]]) -> str:
        """Store a pass/fail matrix; cells may be ``None`` for rows not run on a domain."""
        verification_id = str(uuid.uuid4())
        passed = all(cell is not False for row in matrix.values() for cell in row.values())
        with self.get_session() as session:
            session.add(VerificationRun(
                id=verification_id, profiles=",".join(profiles), resolution=resolution,
                matrix_json=json.dumps(matrix, sort_keys=True), passed=passed,
            ))
        return verification_id

    def list_verifications(self, limit: int = 20) -> List[VerificationRun]:
        with self.get_session() as session:
            rows = (
                session.query(VerificationRun)
                .order_by(VerificationRun.created_at.desc())
                .limit(limit)
                .all()
            )
            session.expunge_all()
            return rows
