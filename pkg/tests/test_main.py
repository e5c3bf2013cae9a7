"""Tests for the command line entry point."""

import json

import pytest

import main as cli
from config.config_manager import ConfigManager


@pytest.fixture
def run(tmp_path, monkeypatch):
    """Invoke ``main`` with storage, logs and outputs isolated in ``tmp_path``."""
    for key in ("ELAB_THREADS", "ELAB_LAB__THREADS", "ELAB_GEOMETRY__RESOLUTION"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setattr(ConfigManager, "DEFAULT_CONFIG_PATH", tmp_path / "settings.yaml")

    def invoke(*argv):
        return cli.main([
            *argv,
            "--out", str(tmp_path / "out"),
            "--set", f"storage.db_path={tmp_path / 'runs.db'}",
            "--set", f"logging.log_path={tmp_path / 'elab.log'}",
            "--set", "lab.threads=1",
        ])

    return invoke


class TestArguments:

    def test_overrides_are_merged(self, tmp_path, monkeypatch):
        monkeypatch.setattr(ConfigManager, "DEFAULT_CONFIG_PATH", tmp_path / "settings.yaml")
        args = cli.parse_arguments(["grid", "--profile", "3d", "--seed", "7", "--resolution", "17",
                                    "--set", "solver.krylov=bicgstab;sfnt.q=3"])
        config = cli.build_config(args)

        assert config.get_geometry_config().kind == "cube"
        assert config.get_geometry_config().dim == 3
        assert config.get_lab_config().seed == 7
        assert config.get_solver_config().krylov == "bicgstab"
        assert config.get_sfnt_config().q == 3.0

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            cli.parse_arguments(["simulate"])


class TestCommands:

    def test_bad_configuration_exits_with_two(self, run, capsys):
        assert run("capacity", "--set", "solver.krylov=cg") == 2
        assert "configuration error" in capsys.readouterr().err

    def test_capacity(self, run, capsys):
        assert run("capacity", "--resolution", "33") == 0
        report = json.loads(capsys.readouterr().out)
        assert report["domain"] == "square"
        assert 0 < report["min_ratio"] <= 1

    def test_grid_writes_dumps(self, run, tmp_path, capsys):
        assert run("grid", "--resolution", "33") == 0
        report = json.loads(capsys.readouterr().out)

        assert report["domain"]["cells"] == 961
        assert report["grid"]["max_children"] >= 1
        for suffix in ("grid", "cubes", "cbor"):
            assert (tmp_path / "out" / f"square.{suffix}").exists()

    def test_measure(self, run, tmp_path, capsys):
        assert run("measure", "--resolution", "33") == 0
        report = json.loads(capsys.readouterr().out)
        assert report["mass"] == pytest.approx(1.0, abs=1e-9)
        assert (tmp_path / "out" / "omega.csv").exists()

    def test_lab_error_exits_with_one(self, run, capsys):
        code = run("grid", "--profile", "koch", "--resolution", "33", "--set", "geometry.depth=2")
        assert code == 1
        assert capsys.readouterr().err.startswith("elab: ")

    def test_runs_on_empty_registry(self, run, capsys):
        assert run("runs") == 0
        assert capsys.readouterr().out == ""
