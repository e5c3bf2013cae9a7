"""Tests for the dyadic boundary lattice."""

import numpy as np
import pytest

from core.domain import GridDomain
from core.dyadic_grid import DyadicGrid
from core.error_handler import DyadicRangeError, ResolutionError


class TestDyadicGrid:
    """Test suite for DyadicGrid."""

    def test_generation_range(self, square_grid):
        assert square_grid.k_min == -1
        assert square_grid.k_max == 4

    def test_single_top_cube(self, square_grid):
        top = square_grid.cubes_at(square_grid.k_min)
        assert len(top) == 1
        assert top[0].members.size == square_grid.n_points

    def test_each_generation_partitions_the_boundary(self, square_grid):
        for k in range(square_grid.k_min, square_grid.k_max + 1):
            members = np.concatenate([c.members for c in square_grid.cubes_at(k)])
            assert np.array_equal(np.sort(members), np.arange(square_grid.n_points))

    def test_children_tile_parent(self, square_grid):
        for cube in square_grid.cubes:
            if not cube.children:
                continue
            members = np.concatenate([c.members for c in square_grid.children(cube)])
            assert np.array_equal(np.sort(members), cube.members)
            assert all(c.k == cube.k + 1 for c in square_grid.children(cube))

    def test_leaves_are_finest_generation(self, square_grid):
        leaf = square_grid.leaf_of(5)
        assert leaf.k == square_grid.k_max
        assert 5 in leaf.members
        assert leaf.length == pytest.approx(2.0 ** -4)

    def test_descent(self, square_grid):
        top = square_grid.cubes_at(square_grid.k_min)[0]
        leaf = square_grid.leaf_of(0)

        assert square_grid.is_descendant(leaf, top)
        assert not square_grid.is_descendant(top, leaf)
        assert square_grid.parent(top) is None

        shallow = square_grid.descendants(top, max_depth=1)
        assert len(shallow) == 1 + len(top.children)
        assert len(square_grid.descendants(top)) == len(square_grid.cubes)

    def test_generation_out_of_range(self, square_grid):
        with pytest.raises(DyadicRangeError, match="outside"):
            square_grid.cubes_at(square_grid.k_max + 1)

    def test_cube_measure(self, square_grid, square):
        mass = square_grid.cube_measure(square.sigma)
        top = square_grid.cubes_at(square_grid.k_min)[0]

        assert mass[top.id] == pytest.approx(square.sigma.sum())
        for cube in square_grid.cubes:
            assert mass[cube.id] == pytest.approx(square.sigma[cube.members].sum())

    def test_every_cube_has_a_corkscrew(self, square_grid, square):
        for cube in square_grid.cubes:
            corkscrew = square_grid.corkscrew(cube.id)
            assert corkscrew.constant > 0
            assert square.contains(corkscrew.point)[0]

    def test_corkscrew_is_cached(self, square_grid):
        assert square_grid.corkscrew(3) is square_grid.corkscrew(3)

    def test_cube_radius_never_below_spacing(self, square_grid, square):
        radii = np.array([c.radius for c in square_grid.cubes])
        assert radii.min() >= square.h - 1e-15
        assert all(c.radius <= c.length for c in square_grid.cubes)

    def test_ball_cubes(self, square_grid):
        hits = square_grid.ball_cubes(square_grid.points[0], 0.001)
        assert len(hits) == 1
        assert hits[0].k == 2
        assert 0 in hits[0].members

    def test_sandwich_and_summary(self, square_grid):
        summary = square_grid.summary()

        assert summary["sandwich_constant"] >= 1.0
        assert summary["xi"] >= 1.0
        assert summary["cubes"] == len(square_grid.cubes)
        assert 1 <= summary["max_children"] == square_grid.max_children()

    def test_thin_boundary_fit_shape(self, square_grid):
        fit = square_grid.thin_boundary([0.1, 0.25, 0.5])

        assert len(fit.taus) == len(fit.mean_ratios)
        assert set(fit.taus) <= {0.1, 0.25, 0.5}
        assert all(0 < ratio <= 1 for ratio in fit.mean_ratios)

    def test_explicit_finest_generation(self, square):
        grid = DyadicGrid(square, k_max=2)
        assert grid.k_max == 2
        assert len(grid.labels) == 4

    def test_too_coarse_for_any_generation(self):
        with pytest.raises(ResolutionError):
            DyadicGrid(GridDomain.square(17), finest_scale_cells=64)

    def test_grid_needs_five_points_per_side(self):
        with pytest.raises(ResolutionError, match="too coarse for a dyadic grid"):
            DyadicGrid(GridDomain.square(4))


class TestThinBoundary:
    """Mass of the boundary layer of a cube."""

    def test_whole_boundary_has_no_layer(self, square_grid):
        top = square_grid.cubes_at(square_grid.k_min)[0]
        for tau in (0.01, 0.5, 0.99):
            assert square_grid.thin_boundary_mass(top.id, tau, square_grid.weights) == 0.0

    def test_layer_empties_as_tau_shrinks(self, square_grid):
        cube = next(c for c in square_grid.cubes_at(1) if np.isfinite(c.inner))
        assert square_grid.thin_boundary_mass(cube.id, 1e-4, square_grid.weights) == 0.0

    def test_layer_is_part_of_the_cube(self, square_grid):
        cube = next(c for c in square_grid.cubes_at(1) if np.isfinite(c.inner))
        mass = square_grid.cube_measure(square_grid.weights)[cube.id]
        layer = square_grid.thin_boundary_mass(cube.id, 0.5, square_grid.weights)
        thinner = square_grid.thin_boundary_mass(cube.id, 0.1, square_grid.weights)

        assert 0.0 < layer <= mass
        assert thinner <= layer

    @pytest.mark.parametrize("tau", [0.0, -0.2, 1.5])
    def test_tau_range(self, square_grid, tau):
        with pytest.raises(ValueError, match="tau must lie"):
            square_grid.thin_boundary_mass(0, tau, square_grid.weights)


class TestFinerGrid:
    """Constants of the boundary lattice at 65 points per side."""

    @pytest.fixture(scope="class")
    def fine_grid(self):
        return DyadicGrid(GridDomain.square(65))

    def test_sandwich_constant(self, fine_grid):
        assert 1.0 <= fine_grid.sandwich_constant() <= 8.0

    def test_child_count_is_bounded(self, fine_grid):
        assert 1 <= fine_grid.max_children() <= 8

    def test_thin_boundary_exponent_on_surface_measure(self, fine_grid):
        fit = fine_grid.thin_boundary([1 / 16, 1 / 8, 1 / 4], fine_grid.weights)

        assert len(fit.taus) == 3
        assert fit.eta >= 0.9
