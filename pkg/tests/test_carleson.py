"""Tests for the dyadic Carleson machinery."""

import numpy as np
import pytest

from core.cube_tree import CubeTree
from core.error_handler import DensityError, MeasureError
from logic.carleson import (
    ainfty_curve,
    carleson_norm,
    carleson_norm_restricted,
    comparability_check,
    doubling_constant,
    duality_check,
    project_measure,
    sawtooth_nodes,
    stopping_family,
    tent_A,
    tent_A_all,
    tent_B,
    tent_B_all,
    weighted_carleson_norm,
)


@pytest.fixture
def tree():
    return CubeTree.uniform(2, 3)


class TestTents:

    def test_vectorised_tents_match_pointwise(self):
        tree = CubeTree.random(4, max_children=3, seed=2, min_children=2)
        rng = np.random.default_rng(2)
        gamma = rng.normal(size=tree.n_nodes)
        mu = tree.mass(rng.uniform(0.5, 2.0, tree.n_atoms))
        root = tree.children[0][0]

        a_all = tent_A_all(tree, gamma, mu, root)
        b_all = tent_B_all(tree, gamma, mu, root)
        for atom in range(tree.n_atoms):
            assert a_all[atom] == pytest.approx(tent_A(tree, gamma, mu, root, atom))
            assert b_all[atom] == pytest.approx(tent_B(tree, gamma, mu, root, atom))

    def test_tents_vanish_outside_root(self, tree):
        gamma = np.ones(tree.n_nodes)
        mu = tree.mass(np.ones(8))
        assert tent_A(tree, gamma, mu, 1, 7) == 0.0
        assert tent_B(tree, gamma, mu, 1, 7) == 0.0
        assert np.all(tent_A_all(tree, gamma, mu, 1)[4:] == 0.0)

    def test_truncation_drops_top_levels(self, tree):
        gamma = np.zeros(tree.n_nodes)
        gamma[0] = 1.0
        mu = tree.mass(np.ones(8))
        assert tent_A(tree, gamma, mu, 0, 3) == pytest.approx(np.sqrt(1 / 8))
        assert tent_A(tree, gamma, mu, 0, 3, truncation=1) == 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_duality_on_random_trees(self, seed):
        tree = CubeTree.random(4, max_children=3, seed=seed)
        rng = np.random.default_rng(seed)
        alpha = rng.normal(size=tree.n_nodes)
        beta = rng.normal(size=tree.n_nodes)
        mu_atoms = rng.uniform(0.1, 3.0, tree.n_atoms)

        lhs, rhs = duality_check(tree, alpha, beta, mu_atoms, 0)
        assert lhs <= rhs


class TestCarlesonNorms:

    def test_indicator_of_root(self, tree):
        gamma = np.zeros(tree.n_nodes)
        gamma[0] = 1.0
        assert carleson_norm(tree, gamma, tree.mass(np.ones(8)), 0) == pytest.approx(1 / 8)

    def test_weighted_norm_counts_generations(self, tree):
        mass = tree.mass(np.ones(8))
        assert weighted_carleson_norm(tree, np.ones(tree.n_nodes), mass, 0) == pytest.approx(4.0)

    def test_sawtooth_nodes(self, tree):
        assert sawtooth_nodes(tree, [1], 0) == [0, 2, 5, 6, 11, 12, 13, 14]
        assert sawtooth_nodes(tree, [], 0) == list(range(15))

    def test_sawtooth_family_validation(self, tree):
        with pytest.raises(MeasureError, match="nested"):
            sawtooth_nodes(tree, [1, 3], 0)
        with pytest.raises(MeasureError, match="not below"):
            sawtooth_nodes(tree, [2], 1)

    def test_restricted_norm(self, tree):
        mass = tree.mass(np.ones(8))
        value = carleson_norm_restricted(tree, np.ones(tree.n_nodes), [1], mass, 0)
        assert value == pytest.approx(1.75)

    def test_doubling(self, tree):
        assert doubling_constant(tree, tree.mass(np.ones(8))) == pytest.approx(2.0)
        skewed = tree.mass(np.array([7.0, 1, 1, 1, 1, 1, 1, 1]))
        assert doubling_constant(tree, skewed) == pytest.approx(8.0)


class TestStoppingAndProjection:

    def test_stopping_family(self, tree):
        mu = tree.mass(np.ones(8))
        nu = tree.mass(np.array([5.0, 1, 1, 1, 1, 1, 1, 1]))
        assert stopping_family(tree, mu, nu, 0, 0.5) == [7]

    def test_projection_keeps_member_mass(self, tree):
        mu_atoms = np.ones(8)
        nu_atoms = np.array([5.0, 1, 1, 1, 1, 1, 1, 1])
        projected = project_measure(tree, [3], mu_atoms, nu_atoms)

        assert projected[:2] == pytest.approx([3.0, 3.0])
        assert np.array_equal(projected[2:], nu_atoms[2:])
        assert projected.sum() == pytest.approx(nu_atoms.sum())

    def test_projection_needs_mu_mass(self, tree):
        mu_atoms = np.ones(8)
        mu_atoms[:2] = 0.0
        with pytest.raises(DensityError):
            project_measure(tree, [3], mu_atoms, np.ones(8))


class TestAInfinity:

    def test_exact_curve_for_equal_measures(self, tree):
        curve = ainfty_curve(tree, np.ones(8), np.ones(8), [0.5], method="exact")

        assert curve.betas[0] == pytest.approx(0.625)
        assert curve.cubes[0] == 0
        assert curve.witnesses[0].size == 5
        assert curve.holds(0.5, 0.6)
        assert not curve.holds(0.5, 0.7)

    def test_prefix_and_fractional(self, tree):
        prefix = ainfty_curve(tree, np.ones(8), np.ones(8), [0.5], method="prefix")
        fractional = ainfty_curve(tree, np.ones(8), np.ones(8), [0.5], method="fractional")

        assert prefix.betas[0] == pytest.approx(0.625)
        assert fractional.betas[0] == pytest.approx(0.5)

    def test_curve_errors(self, tree):
        nu = np.ones(8)
        nu[0] = 0.0
        with pytest.raises(DensityError, match="zero mass"):
            ainfty_curve(tree, np.ones(8), nu, [0.5])
        with pytest.raises(ValueError, match="Unknown"):
            ainfty_curve(tree, np.ones(8), np.ones(8), [0.5], method="greedy")
        curve = ainfty_curve(tree, np.ones(8), np.ones(8), [0.5])
        with pytest.raises(ValueError, match="not on the curve"):
            curve.holds(0.3, 0.1)


class TestComparability:

    def test_equal_measures_are_comparable(self, tree):
        gamma = np.random.default_rng(1).uniform(0.0, 1.0, tree.n_nodes)
        result = comparability_check(tree, gamma, np.ones(8), np.ones(8), 0.5, 0.5, 0)

        assert result.certified
        assert result.ratio == pytest.approx(1.0)
        assert result.lower == pytest.approx(0.25)
        assert result.upper == pytest.approx(4.0)

    def test_concentrated_measure_is_not_certified(self, tree):
        nu = np.full(8, 1e-9)
        nu[0] = 1.0
        result = comparability_check(tree, np.ones(tree.n_nodes), np.ones(8), nu, 0.5, 0.5, 0)

        assert not result.certified
        assert np.isnan(result.ratio)
        assert result.witness_cube == 1
