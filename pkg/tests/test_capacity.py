"""Tests for condenser capacity and the capacity density ratio."""

import numpy as np
import pytest

from core.capacity import cdc_profile, cdc_ratio
from core.error_handler import GeometryError


class TestCapacityDensity:
    """Test suite for cdc_ratio and cdc_profile."""

    def test_radius_below_spacing(self, square):
        with pytest.raises(GeometryError, match="below the lattice spacing"):
            cdc_ratio(square, [0.5, 0.0], 0.5 * square.h)

    def test_ball_inside_the_domain_has_no_complement(self, square):
        assert cdc_ratio(square, [0.5, 0.5], 4 * square.h) == 0.0

    def test_flat_side_is_uniformly_fat(self, square):
        ratio = cdc_ratio(square, [0.5, 0.5 * square.h], 4 * square.h)
        assert 0.2 < ratio < 1.0

    def test_domain_method_delegates(self, square):
        x = [0.5, 0.5 * square.h]
        assert square.cdc_ratio(x, 4 * square.h) == pytest.approx(cdc_ratio(square, x, 4 * square.h))

    def test_profile_takes_the_minimum(self, square):
        points = square.boundary_points[:3]
        radii = [2 * square.h, 4 * square.h]
        profile = cdc_profile(square, points, radii)

        ratios = [cdc_ratio(square, p, r) for p in points for r in radii]
        assert profile.samples == 6
        assert profile.ratio == pytest.approx(min(ratios))
        assert profile.argmin_radius in radii

    def test_profile_limit(self, square):
        profile = cdc_profile(square, square.boundary_points, [2 * square.h], limit=5)
        assert profile.samples == 5
        assert np.isfinite(profile.ratio)
