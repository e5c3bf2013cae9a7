"""
Unit tests for the run registry.

Tests run and sweep point storage, invariant outcomes, foreign key
constraints and transaction rollback behavior.
"""

import json

import pytest
from sqlalchemy.exc import IntegrityError

from core.db_manager import RunRegistry
from core.error_handler import StorageError
from models.database import InvariantResult, ScenarioRun, SweepPoint


@pytest.fixture
def registry(tmp_path):
    """Create a temporary registry for testing."""
    manager = RunRegistry(tmp_path / "runs.db")
    manager.initialize_database()
    return manager


@pytest.fixture
def run_id(registry):
    return registry.record_run("epsilon_sweep", "square", 33, 7, {"lab": {"seed": 7}}, "/tmp/out")


class TestScenarioRuns:
    """Test storage of scenario runs."""

    def test_record_run(self, registry, run_id):
        """A new run starts in the running state with its configuration."""
        stored = registry.get_run(run_id)
        assert stored["status"] == "running"
        assert stored["kind"] == "epsilon_sweep"
        assert stored["config"] == {"lab": {"seed": 7}}
        assert stored["points"] == []

    def test_sweep_points_keep_their_order(self, registry, run_id):
        """Points come back ordered by position."""
        registry.record_sweep_point(run_id, 1, 0.2, {"carleson": 0.04, "rh": {"rh_2": 1.1}})
        registry.record_sweep_point(run_id, 0, 0.1, {"carleson": 0.01, "rh": {"rh_2": 1.02}})

        points = registry.get_run(run_id)["points"]
        assert [p["parameter"] for p in points] == [0.1, 0.2]
        assert points[1]["rh"] == {"rh_2": 1.1}
        assert points[0]["cme"] is None

    def test_finish_passed(self, registry, run_id):
        """All invariants true closes the run as passed."""
        run = registry.finish_run(run_id, {"rh2_small_eps": True, "rh2_monotone_in_eps": True})
        assert run.status == "passed"
        assert run.failed_invariant is None
        assert run.finished_at is not None

    def test_finish_failed_names_first_failure(self, registry, run_id):
        """The first false invariant is recorded."""
        registry.finish_run(run_id, {"rh2_small_eps": True, "rh2_monotone_in_eps": False},
                            {"rh2_monotone_in_eps": "RH_2 along sweep [1.0, 0.9]"})
        stored = registry.get_run(run_id)
        assert stored["status"] == "failed"
        assert stored["failed_invariant"] == "rh2_monotone_in_eps"
        assert stored["invariants"] == {"rh2_small_eps": True, "rh2_monotone_in_eps": False}

    def test_list_runs(self, registry):
        """Every recorded run is listed."""
        first = registry.record_run("identity", "square", 33, 0, {})
        second = registry.record_run("blend", "disk", 65, 0, {})
        assert {r.id for r in registry.list_runs()} == {first, second}
        assert len(registry.list_runs(limit=1)) == 1

    def test_unknown_run(self, registry):
        """Operations on a missing run raise StorageError."""
        assert registry.get_run("missing") is None
        with pytest.raises(StorageError, match="Unknown run"):
            registry.record_sweep_point("missing", 0, 0.0, {})
        with pytest.raises(StorageError, match="Unknown run"):
            registry.finish_run("missing", {})


class TestVerificationRuns:

    def test_matrix_with_skipped_cells(self, registry):
        """None cells do not count as failures."""
        matrix = {"measure_total_mass": {"square": True, "koch": True},
                  "green_transpose": {"square": True, "koch": None}}
        registry.record_verification(["square", "koch"], 65, matrix)

        stored = registry.list_verifications()[0]
        assert stored.passed is True
        assert stored.profiles == "square,koch"
        assert json.loads(stored.matrix_json)["green_transpose"]["koch"] is None

    def test_failed_matrix(self, registry):
        registry.record_verification(["square"], 33, {"tent_duality": {"square": False}})
        assert registry.list_verifications()[0].passed is False


class TestConstraints:
    """Test foreign key relationships and rollback."""

    def test_point_requires_valid_run(self, registry):
        """A sweep point pointing at no run is rejected by the database."""
        with pytest.raises(IntegrityError):
            with registry.get_session() as session:
                session.add(SweepPoint(run_id="nonexistent", position=0, parameter=0.0))

    def test_invariant_requires_valid_run(self, registry):
        with pytest.raises(IntegrityError):
            with registry.get_session() as session:
                session.add(InvariantResult(run_id="nonexistent", name="x", passed=True))

    def test_rollback_on_error(self, registry, run_id):
        """A failing session leaves earlier state untouched."""
        with pytest.raises(RuntimeError):
            with registry.get_session() as session:
                run = session.get(ScenarioRun, run_id)
                run.status = "passed"
                raise RuntimeError("abort")
        assert registry.get_run(run_id)["status"] == "running"

    def test_session_before_initialize(self, tmp_path):
        with pytest.raises(StorageError, match="before initialize_database"):
            with RunRegistry(tmp_path / "late.db").get_session():
                pass
