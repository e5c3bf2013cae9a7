"""Tests for Whitney regions, Carleson boxes and sawtooth regions."""

import numpy as np
import pytest

from core.error_handler import DyadicError, DyadicRangeError, WhitneyTuningError
from core.sawtooth import WhitneyRegions


@pytest.fixture(scope="module")
def top(square_grid):
    return square_grid.cubes_at(1)[0]


class TestRegions:
    """U_Q and the derived boxes."""

    def test_regions_contain_the_anchor(self, square_regions, square_grid, square_whitney):
        for cube in square_grid.cubes:
            cells = square_regions.region(cube)
            anchor = square_whitney.cubes[square_regions.anchor[cube.id]]
            assert cells.size > 0
            assert np.isin(anchor.cells, cells).all()

    def test_tuning_recorded(self, square_regions):
        assert square_regions.tuning.k_star >= 1
        assert square_regions.tuning.window >= 2

    def test_starred_region_is_larger(self, square_regions, top):
        plain = square_regions.region(top)
        starred = square_regions.region(top, factor=2.0)
        assert np.isin(plain, starred).all()

    def test_carleson_box_contains_descendant_regions(self, square_regions, square_grid, top):
        box = square_regions.carleson_box(top)
        for cube in square_grid.descendants(top):
            assert np.isin(square_regions.region(cube), box.cells).all()
        assert np.isin(box.cells, box.starred_cells).all()

    def test_box_sandwich(self, square_regions, top):
        kappa0, kappa1 = square_regions.box_sandwich(top)
        assert kappa0 > 0
        assert kappa1 >= 0

    def test_carleson_box_ball(self, square_regions, square_grid):
        box = square_regions.carleson_box_ball(square_grid.points[0], 0.001)
        assert not box.empty

    def test_region_overlap(self, square_regions):
        assert square_regions.overlap_count() >= 1


class TestSawtooth:
    """Sawtooth regions over a stopping family."""

    def test_empty_family_gives_the_box(self, square_regions, top):
        saw = square_regions.sawtooth([], top)
        box = square_regions.carleson_box(top)
        assert np.array_equal(saw.cells, box.cells)

    def test_depth_family(self, square_regions, square_grid, top):
        family = square_regions.depth_family(top, 1)
        assert {c.id for c in family} == set(top.children)
        assert all(c.k == top.k + 1 for c in family)

    def test_sawtooth_keeps_only_uncovered_cubes(self, square_regions, top):
        family = square_regions.depth_family(top, 1)
        saw = square_regions.sawtooth(family, top)
        assert saw.cubes == [top.id]
        assert np.array_equal(saw.cells, square_regions.region(top))

    def test_family_must_be_disjoint(self, square_regions, square_grid, top):
        child = square_grid.children(top)[0]
        grandchild = square_grid.children(child)[0]
        with pytest.raises(DyadicError, match="overlap"):
            square_regions.family_cubes([child, grandchild], top)

    def test_family_must_sit_inside_top(self, square_regions, square_grid, top):
        stranger = next(c for c in square_grid.cubes_at(2)
                        if not square_grid.is_descendant(c, top))
        with pytest.raises(DyadicError, match="not inside"):
            square_regions.family_cubes([stranger], top)

    def test_region_domain_matches_cells(self, square_regions, top):
        saw = square_regions.sawtooth(square_regions.depth_family(top, 2), top)
        domain = square_regions.region_domain(saw)
        assert domain.n_cells == saw.cells.size
        assert square_regions.region_domain(saw) is domain

    def test_inner_faces_border_the_rest_of_the_domain(self, square_regions, top):
        saw = square_regions.sawtooth(square_regions.depth_family(top, 1), top)
        domain = square_regions.region_domain(saw)
        inner = square_regions.inner_faces(domain)
        assert inner.size > 0
        assert inner.size <= domain.n_boundary

    def test_sawtooth_cdc_in_unit_interval(self, square_regions, top):
        saw = square_regions.sawtooth(square_regions.depth_family(top, 1), top)
        ratio = square_regions.sawtooth_cdc(saw, samples=4)
        assert 0.0 <= ratio <= 1.0

    def test_common_corkscrew(self, square_regions, square, top):
        family = square_regions.depth_family(top, 1)
        corkscrew = square_regions.common_corkscrew(family, top)

        assert square.contains(corkscrew.point)[0]
        assert corkscrew.sawtooth_clearance > 0
        assert corkscrew.cell in square_regions.sawtooth(family, top).cells

    def test_projection_patches(self, square_regions, top):
        family = square_regions.depth_family(top, 2)
        patches, overlap = square_regions.projection_patches(family, top)

        assert len(patches) <= len(family)
        for patch in patches:
            assert patch.faces.size > 0
            assert patch.size > 0
        if patches:
            assert overlap >= 1


class TestCutoff:
    """Partition-of-unity cutoff of a truncated sawtooth."""

    def test_values_and_support(self, square_regions, square_grid):
        psi = square_regions.cutoff_psi(square_grid.cubes_at(0)[0], 4)

        assert psi.values.min() >= 0.0
        assert psi.values.max() <= 1.0 + 1e-12
        assert psi.support_violation == 0.0
        assert 1.0 <= psi.lower_constant < np.inf
        assert psi.gradient_constant >= 0.0

    def test_depth_below_four(self, square_regions, square_grid):
        with pytest.raises(ValueError, match="at least 4"):
            square_regions.cutoff_psi(square_grid.cubes_at(0)[0], 3)

    def test_depth_past_finest_generation(self, square_regions, square_grid, top):
        with pytest.raises(DyadicRangeError, match="exceeds"):
            square_regions.cutoff_psi(top, square_grid.k_max - top.k + 1)


class TestTuning:
    """Tuning limits and the strict mode."""

    @staticmethod
    def _never_connects(self, cube, k_star, window):
        return np.zeros(0, dtype=np.int64), False

    def test_strict_tuning_raises(self, square_grid, square_whitney, monkeypatch):
        monkeypatch.setattr(WhitneyRegions, "_connect", self._never_connects)
        with pytest.raises(WhitneyTuningError, match="unconnected"):
            WhitneyRegions(square_grid, square_whitney, tuning_limit=2, strict=True)

    def test_lenient_tuning_records_failures(self, square_grid, square_whitney, monkeypatch):
        monkeypatch.setattr(WhitneyRegions, "_connect", self._never_connects)
        regions = WhitneyRegions(square_grid, square_whitney, tuning_limit=2)
        assert len(regions.tuning.failures) == len(square_grid.cubes)

    def test_tuning_limit_validated(self, square_grid, square_whitney):
        with pytest.raises(ValueError, match="tuning_limit"):
            WhitneyRegions(square_grid, square_whitney, tuning_limit=0)
