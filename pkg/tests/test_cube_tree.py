"""Tests for cube trees over weighted atoms."""

import numpy as np
import pytest

from core.cube_tree import CubeTree
from core.error_handler import DyadicError


class TestCubeTree:
    """Test suite for CubeTree."""

    def test_uniform_shape(self):
        tree = CubeTree.uniform(2, 3)

        assert tree.n_nodes == 15
        assert tree.n_atoms == 8
        assert tree.roots == [0]
        assert len(tree.leaves) == 8
        assert tree.summary()["depth"] == 3

    def test_atoms_nest(self):
        tree = CubeTree.uniform(3, 2)
        assert np.array_equal(tree.atoms[0], np.arange(9))
        for node in range(tree.n_nodes):
            for child in tree.children[node]:
                assert np.isin(tree.atoms[child], tree.atoms[node]).all()

    def test_mass_and_subtree_sums(self):
        tree = CubeTree.uniform(2, 3)
        mass = tree.mass(np.ones(8))

        assert mass[0] == 8
        assert mass[1] == 4
        assert all(mass[leaf] == 1 for leaf in tree.leaves)

        sums = tree.subtree_sums(np.ones(tree.n_nodes))
        assert sums[0] == 15
        assert sums[1] == 7

    def test_path_runs_from_root_to_leaf(self):
        tree = CubeTree.uniform(2, 3)
        path = tree.path(5)

        assert path[0] == 0
        assert path[-1] == tree.leaf_of[5]
        assert len(path) == 4
        assert all(tree.parent[b] == a for a, b in zip(path, path[1:]))

    def test_descendants_and_roots(self):
        tree = CubeTree.uniform(2, 2)
        assert tree.descendants(1) == [1, 3, 4]
        assert tree.is_descendant(4, 1)
        assert not tree.is_descendant(4, 2)
        assert tree.root_of(6) == 0

    def test_random_tree_respects_min_children(self):
        tree = CubeTree.random(4, max_children=3, seed=5, min_children=2)
        for node in range(tree.n_nodes):
            if tree.children[node]:
                assert 2 <= len(tree.children[node]) <= 3

    def test_random_tree_is_reproducible(self):
        a = CubeTree.random(4, seed=8)
        b = CubeTree.random(4, seed=8)
        assert np.array_equal(a.parent, b.parent)

    def test_parent_must_precede_child(self):
        with pytest.raises(DyadicError, match="before its parent"):
            CubeTree([-1, 2, 0], {1: [0], 2: [1]}, 2)

    def test_atoms_must_be_partitioned(self):
        with pytest.raises(DyadicError, match="shares atoms"):
            CubeTree([-1, 0, 0], {1: [0, 1], 2: [1]}, 2)
        with pytest.raises(DyadicError, match="belong to no leaf"):
            CubeTree([-1, 0, 0], {1: [0], 2: [1]}, 3)

    def test_inner_node_cannot_own_atoms(self):
        with pytest.raises(DyadicError, match="has children"):
            CubeTree([-1, 0], {0: [0], 1: [1]}, 2)

    def test_from_grid(self, square_grid):
        tree = CubeTree.from_grid(square_grid)

        assert tree.n_nodes == len(square_grid.cubes)
        assert tree.n_atoms == square_grid.n_points
        assert tree.roots == [0]
        for cube in square_grid.cubes:
            assert np.array_equal(tree.atoms[cube.id], cube.members)
            assert tree.depth[cube.id] == cube.k
