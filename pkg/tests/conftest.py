"""Shared fixtures: isolated configuration and small laboratories."""

import pytest

from config.config_manager import ConfigManager
from core.coefficients import CoefficientField
from core.domain import GridDomain
from core.dyadic_grid import DyadicGrid
from core.elliptic_solver import EllipticOperator
from core.sawtooth import WhitneyRegions
from core.whitney import WhitneyDecomposition
from logic.experiment_runner import build_laboratory


@pytest.fixture
def config(tmp_path, monkeypatch):
    """Configuration isolated in ``tmp_path`` with a coarse square."""
    for key in ("ELAB_THREADS", "ELAB_LAB__THREADS", "ELAB_GEOMETRY__RESOLUTION"):
        monkeypatch.delenv(key, raising=False)
    manager = ConfigManager(tmp_path / "settings.yaml")
    manager.apply_overrides([
        "lab.threads=1",
        "geometry.resolution=33",
        f"storage.db_path={tmp_path / 'runs.db'}",
        f"experiment.out_dir={tmp_path / 'out'}",
        f"logging.log_path={tmp_path / 'elab.log'}",
    ])
    return manager


@pytest.fixture(scope="module")
def square():
    return GridDomain.square(33)


@pytest.fixture(scope="module")
def square_grid(square):
    return DyadicGrid(square)


@pytest.fixture(scope="module")
def square_whitney(square):
    return WhitneyDecomposition(square)


@pytest.fixture(scope="module")
def square_regions(square_grid, square_whitney):
    return WhitneyRegions(square_grid, square_whitney)


@pytest.fixture(scope="module")
def laplace(square):
    return EllipticOperator(square, CoefficientField.identity(square))


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    """Square laboratory at resolution 33 with the identity operator."""
    manager = ConfigManager(tmp_path_factory.mktemp("lab") / "settings.yaml")
    manager.apply_overrides(["geometry.kind=square", "geometry.dim=2", "geometry.resolution=33"])
    return build_laboratory(manager)
