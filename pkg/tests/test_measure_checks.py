"""Tests for elliptic measure property sweeps and the perturbation identity."""

import numpy as np
import pytest

from core.coefficients import CoefficientField
from core.domain import GridDomain
from core.dyadic_grid import DyadicGrid
from core.elliptic_solver import EllipticOperator
from core.error_handler import MeasureError
from logic.measure_checks import (
    admissible_cubes,
    bourgain_sweep,
    cfms_sweep,
    change_of_pole_sweep,
    doubling_sweep,
    green_size_sweep,
    perturbation_identity_check,
)


class TestPerturbationIdentity:

    def test_discrete_pairing_matches_difference(self, lab):
        domain = lab.domain
        perturbed = lab.operator_for(CoefficientField.bump(domain, 0.3, (0.5, 0.5), 0.2))
        data = domain.boundary_points[:, 0] ** 2

        residual = perturbation_identity_check(lab.operator, perturbed, data, [0.4, 0.6])

        assert residual.difference != 0.0
        assert residual.discrete == pytest.approx(residual.difference, rel=1e-6, abs=1e-12)
        assert np.isfinite(residual.integral)
        assert residual.discrepancy >= 0.0

    def test_equal_operators_have_no_difference(self, lab):
        data = lab.domain.boundary_points[:, 1]
        residual = perturbation_identity_check(lab.operator, lab.operator, data, [0.5, 0.5])

        assert residual.difference == 0.0
        assert residual.integral == 0.0
        assert residual.discrepancy == 0.0


class TestSweeps:

    def test_admissible_cubes(self, lab):
        cubes = admissible_cubes(lab.operator, lab.grid, samples=5)
        assert 0 < len(cubes) <= 5
        for cube in cubes:
            lab.operator.pole_cell(lab.grid.corkscrew(cube.id).point)

    def test_bourgain(self, lab):
        report = bourgain_sweep(lab.operator, lab.grid, samples=10)

        assert 0.0 < report.constant <= 1.0
        assert report.constant == report.lowest
        assert report.samples == len(report.values)

    def test_doubling(self, lab):
        report = doubling_sweep(lab.operator, lab.grid)
        assert report.constant >= 1.0
        assert set(report.as_dict()) == {"name", "constant", "samples", "lowest", "highest", "argmax"}

    def test_cfms(self, lab):
        report = cfms_sweep(lab.operator, lab.grid, samples=3, poles_per_cube=2)
        assert report.constant >= 1.0
        assert np.isfinite(report.constant)

    def test_change_of_pole(self):
        # mid-scale cubes only clear the pole margin on the finer lattice
        domain = GridDomain.square(65)
        grid = DyadicGrid(domain)
        operator = EllipticOperator(domain, CoefficientField.identity(domain))

        report = change_of_pole_sweep(operator, grid, samples=12)
        assert report.constant >= 1.0
        assert all(v > 0 for v in report.values)

    def test_green_size(self, lab):
        report = green_size_sweep(lab.operator, samples=4, seed=1)
        assert report.constant > 0.0
        assert report.samples == 4

    def test_empty_sweep(self, lab):
        with pytest.raises(MeasureError, match="No admissible configurations"):
            green_size_sweep(lab.operator, samples=0)


@pytest.mark.slow
class TestPerturbationIdentityRefinement:
    """The volume integral approaches ``u - u0`` as the lattice refines."""

    POLES = [(0.1875, 0.5), (0.5, 0.8125)]

    @classmethod
    def _worst_discrepancy(cls, resolution):
        domain = GridDomain.square(resolution)
        base = EllipticOperator(domain, CoefficientField.identity(domain))
        perturbed = EllipticOperator(domain, CoefficientField.bump(domain, 0.1, (0.5, 0.5), 0.25))
        datasets = [domain.boundary_points[:, 0] ** 2, domain.boundary_points[:, 1]]
        return max(
            perturbation_identity_check(base, perturbed, data, X).discrepancy
            for data in datasets for X in cls.POLES
        )

    def test_discrepancy_shrinks_under_refinement(self):
        coarse = self._worst_discrepancy(129)
        fine = self._worst_discrepancy(257)

        assert coarse <= 0.05
        assert fine < coarse
