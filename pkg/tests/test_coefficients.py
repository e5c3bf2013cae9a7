"""Tests for cellwise coefficient fields."""

import numpy as np
import pytest

from core.coefficients import CoefficientField, build_field
from core.domain import GridDomain
from core.error_handler import EllipticityError


@pytest.fixture(scope="module")
def domain():
    return GridDomain.square(17)


class TestFactories:

    def test_identity(self, domain):
        field = CoefficientField.identity(domain)
        assert field.matrices.shape == (225, 2, 2)
        assert field.ellipticity == pytest.approx(1.0)

    def test_diagonal(self, domain):
        field = CoefficientField.diagonal(domain, [1.0, 4.0])
        assert field.ellipticity == pytest.approx(4.0)

    def test_random_respects_ellipticity(self, domain):
        field = CoefficientField.random(domain, 4.0, seed=3)
        assert field.ellipticity <= 4.0 + 1e-9
        assert field.check(4.0 + 1e-9) == pytest.approx(field.ellipticity)

    def test_random_is_reproducible(self, domain):
        a = CoefficientField.random(domain, 4.0, seed=11)
        b = CoefficientField.random(domain, 4.0, seed=11)
        c = CoefficientField.random(domain, 4.0, seed=12)
        assert np.array_equal(a.matrices, b.matrices)
        assert not np.array_equal(a.matrices, c.matrices)

    def test_random_rejects_small_ellipticity(self, domain):
        with pytest.raises(EllipticityError):
            CoefficientField.random(domain, 0.5)

    def test_bump_support(self, domain):
        identity = CoefficientField.identity(domain)
        field = CoefficientField.bump(domain, 0.5, (0.5, 0.5), 0.2)

        rho = field.difference(identity)
        outside = np.linalg.norm(domain.centers - 0.5, axis=1) >= 0.2
        assert np.all(rho[outside] == 0.0)
        assert rho.max() == pytest.approx(0.5)

    def test_shape_mismatch(self, domain):
        with pytest.raises(ValueError, match="expected"):
            CoefficientField(domain, np.ones((10, 2, 2)))

    def test_build_field(self, domain):
        assert build_field(domain, "identity").name == "identity"
        assert build_field(domain, "bump", amplitude=0.2).name == "bump(0.2)"
        with pytest.raises(ValueError, match="Unknown coefficient field kind"):
            build_field(domain, "fractal")


class TestOperations:

    def test_blend_endpoints(self, domain):
        a = CoefficientField.identity(domain)
        b = CoefficientField.random(domain, 4.0, seed=1)

        assert np.allclose(a.blend(b, 0.0).matrices, a.matrices)
        assert np.allclose(a.blend(b, 1.0).matrices, b.matrices)
        with pytest.raises(ValueError):
            a.blend(b, 1.5)

    def test_truncate(self, domain):
        a = CoefficientField.identity(domain)
        b = CoefficientField.diagonal(domain, [2.0, 2.0])
        cut = a.truncate(b, 3)

        deep = domain.delta >= 2.0 ** -3
        assert np.allclose(cut.matrices[deep], b.matrices[deep])
        assert np.allclose(cut.matrices[~deep], a.matrices[~deep])
        with pytest.raises(ValueError):
            a.truncate(b, -1)

    def test_transpose_twice(self, domain):
        field = CoefficientField.random(domain, 4.0, seed=5)
        assert np.array_equal(field.transpose().transpose().matrices, field.matrices)
        assert field.transpose().ellipticity == pytest.approx(field.ellipticity)

    def test_difference_is_symmetric(self, domain):
        a = CoefficientField.random(domain, 4.0, seed=5)
        b = CoefficientField.random(domain, 4.0, seed=6)
        assert np.allclose(a.difference(b), b.difference(a))
        assert np.all(a.difference(a) == 0.0)

    def test_check_rejects_degenerate_cell(self, domain):
        matrices = np.broadcast_to(np.eye(2), (domain.n_cells, 2, 2)).copy()
        matrices[7] = np.diag([1.0, -1.0])
        field = CoefficientField(domain, matrices)

        with pytest.raises(EllipticityError) as excinfo:
            field.check(10.0)
        assert excinfo.value.cell == 7

    def test_check_rejects_large_constant(self, domain):
        field = CoefficientField.diagonal(domain, [1.0, 20.0])
        with pytest.raises(EllipticityError, match="limit 10"):
            field.check(10.0)
