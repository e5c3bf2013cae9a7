"""Tests for cones, S and N, the CME functional and the sawtooth measure nu."""

import numpy as np
import pytest

from core.error_handler import CoverageError, MeasureError
from logic.sfnt import (
    ConeFamily,
    SawtoothNu,
    cme_functional,
    djk_bounds_check,
    djk_nu,
    good_lambda_fit,
    nontangential_data_check,
    random_boundary_data,
    s_vs_n,
    sawtooth_operator,
)


@pytest.fixture(scope="module")
def cones(lab):
    return ConeFamily(lab.regions, lab.top)


class TestCones:

    def test_cone_chain_runs_from_root_to_leaf(self, lab, cones):
        cone = cones.cone(0)
        leaf = lab.grid.leaf_of(0)
        assert cone.cubes[0] == lab.top.id
        assert cone.cubes[-1] == leaf.id
        assert len(cone.cubes) == leaf.k - lab.top.k + 1
        assert np.isin(cone.cells, cone.starred_cells).all()

    def test_truncated_cone(self, lab):
        cone = ConeFamily(lab.regions, lab.top, truncation=1).cone(0)
        assert len(cone.cubes) == 2

    def test_face_outside_root_has_empty_cone(self, lab):
        root = lab.grid.cubes_at(1)[0]
        outside = next(f for f in range(lab.domain.n_boundary) if f not in set(root.members))
        cone = ConeFamily(lab.regions, root).cone(outside)
        assert cone.cubes == []
        assert cone.cells.size == 0

    def test_constant_solution(self, lab, cones):
        data = np.full(lab.domain.n_boundary, 2.0)
        u = np.full(lab.domain.n_cells, 2.0)
        assert np.allclose(cones.square_function(u, data), 0.0)
        assert np.allclose(cones.nontangential_max(u), 2.0)

    def test_linear_solution(self, lab, cones):
        data = lab.domain.boundary_points[:, 0].copy()
        u = lab.operator.solve_dirichlet(data)
        S = cones.square_function(u, data)
        N = cones.nontangential_max(u)
        assert S.min() > 0
        assert N.max() <= np.abs(data).max() + 1e-9

    def test_unsolved_cells_raise(self, lab, cones):
        u = np.ones(lab.domain.n_cells)
        solved = np.zeros(lab.domain.n_cells, dtype=bool)
        with pytest.raises(CoverageError, match="unsolved"):
            cones.nontangential_max(u, solved=solved)


class TestFunctionals:

    def test_random_data(self, lab):
        family = random_boundary_data(lab.domain, 3, seed=4)
        again = random_boundary_data(lab.domain, 3, seed=4)
        assert len(family) == 3
        assert family[0].shape == (lab.domain.n_boundary,)
        assert all(np.array_equal(a, b) for a, b in zip(family, again))

    def test_cme_of_constant_is_zero(self, lab):
        report = cme_functional(lab.operator, lab.family, np.ones(lab.domain.n_cells))
        assert report.value == 0.0
        assert report.sup_norm == 1.0

    def test_cme_normalisation(self, lab):
        data = lab.domain.boundary_points[:, 0].copy()
        u = lab.operator.solve_dirichlet(data)
        report = cme_functional(lab.operator, lab.family, u, data)

        assert report.value > 0
        assert report.normalized == pytest.approx(report.value / report.sup_norm ** 2)
        assert report.as_dict()["functional"] == "cme"

    def test_good_lambda_needs_two_lattice_points(self):
        S = np.array([1.0, 2.0, 3.0, 4.0])
        fit = good_lambda_fit([(S, S)], np.ones(4), betas=[0.1], gammas=[1.0])
        assert np.isnan(fit.theta)

    def test_good_lambda_table(self):
        rng = np.random.default_rng(0)
        S = rng.uniform(0.0, 1.0, 50)
        N = rng.uniform(0.0, 1.0, 50)
        fit = good_lambda_fit([(S, N)], np.ones(50), betas=[0.1, 0.5], gammas=[0.5, 2.0])
        assert fit.points == 3 * 4
        assert all(0.0 <= row["ratio"] <= 1.0 for row in fit.table)
        assert np.isfinite(fit.theta)

    def test_s_vs_n(self, lab):
        data = random_boundary_data(lab.domain, 2, seed=1)
        report = s_vs_n(lab.operator, lab.regions, lab.top, data)

        assert len(report.ratios) == 2
        assert 0 <= report.constant < np.inf
        assert report.as_dict()["samples"] == 2
        assert report.good_lambda is not None

    def test_nontangential_data_bound(self, lab):
        report = nontangential_data_check(lab.operator, lab.regions, lab.top, samples=3)
        assert len(report.ratios) == 3
        assert 0 < report.constant < np.inf


class TestSawtoothMeasure:

    def test_sawtooth_operator_lives_on_the_region(self, lab):
        region = lab.regions.sawtooth([], lab.top)
        operator = sawtooth_operator(lab.operator, lab.regions, [], lab.top)
        assert operator.domain.n_cells == region.cells.size

    def test_nu_without_stopping_family(self, lab):
        nu = djk_nu(lab.operator, lab.regions, [], lab.top)

        assert nu.values.min() >= -1e-14
        assert 0 < nu.values.sum() <= 1.0 + 1e-9
        assert nu.patches == []
        assert nu.of(lab.top.members) == pytest.approx(nu.values.sum())

    def _nu(self, lab, values):
        omega = lab.operator.elliptic_measure(lab.pole).values
        return SawtoothNu(pole=lab.pole, values=values, omega_star=omega, omega=omega,
                          matched=np.arange(lab.domain.n_boundary), patches=[], family=[],
                          root=lab.top.id)

    def test_bounds_for_nu_equal_to_omega(self, lab):
        omega = lab.operator.elliptic_measure(lab.pole).values
        report = djk_bounds_check(self._nu(lab, omega.copy()), lab.regions, samples=20)

        assert report.samples == 20
        assert report.upper_constant == pytest.approx(1.0)
        assert report.theta == pytest.approx(1.0)
        assert report.lower_constant == pytest.approx(1.0)

    def test_bounds_need_mass(self, lab):
        nu = self._nu(lab, np.zeros(lab.domain.n_boundary))
        with pytest.raises(MeasureError, match="carries nu mass"):
            djk_bounds_check(nu, lab.regions)
