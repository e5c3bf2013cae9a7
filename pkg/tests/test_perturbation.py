"""Tests for disagreement functionals, ball families and reverse Hoelder constants."""

import numpy as np
import pytest

from core.coefficients import CoefficientField
from core.error_handler import DensityError, ResolutionError
from logic.perturbation import (
    BallFamily,
    carleson_bound_check,
    carleson_functional,
    compose_rh,
    composition_pipeline,
    conical_functional,
    disagreement,
    fubini_link,
    gamma_coefficients,
    green_weighted_sup,
    rh_constant,
    rh_sweep,
    rn_density,
    sigma_functional,
)


def _bump(lab, amplitude):
    return CoefficientField.bump(lab.domain, amplitude, (0.5, 0.5), 0.25)


class TestDisagreement:

    def test_equal_fields_have_no_disagreement(self, lab):
        identity = CoefficientField.identity(lab.domain)
        rho = disagreement(identity, identity)
        assert rho.maximum == 0.0
        assert rho.support.size == 0

    def test_symmetric(self, lab):
        a = CoefficientField.identity(lab.domain)
        b = _bump(lab, 0.3)
        assert np.array_equal(disagreement(a, b).values, disagreement(b, a).values)

    def test_covers_the_pointwise_gap(self, lab):
        identity = CoefficientField.identity(lab.domain)
        field = _bump(lab, 0.3)
        rho = disagreement(field, identity)
        assert np.all(rho.values >= field.difference(identity) - 1e-15)
        assert rho.maximum == pytest.approx(0.3)


class TestBallFamily:

    def test_family_from_grid(self, lab):
        family = lab.family
        assert len(family) > 0
        assert family.radii.min() >= lab.domain.h - 1e-15
        assert family.radii.max() < lab.domain.diameter
        assert family.cells.shape == (len(family), lab.domain.n_cells)
        assert family.faces.shape == (len(family), lab.domain.n_boundary)

    def test_more_radii_per_octave(self, lab):
        dense = BallFamily.from_grid(lab.grid, per_octave=3)
        assert len(dense) > len(lab.family)

    def test_inner_balls_are_small(self, lab):
        family = lab.family
        x0, r0 = lab.top.x, lab.top.length
        nested = family.inner(x0, r0)
        assert nested.size > 0
        assert np.all(family.radii[nested] < r0 * family.c0 / 4.0)

    def test_measure_of_sigma(self, lab):
        mass = lab.family.measure(lab.domain.sigma)
        assert np.all(mass > 0)

    def test_no_outer_balls(self, lab):
        with pytest.raises(ResolutionError):
            green_weighted_sup(lab.operator, lab.family, np.ones(lab.domain.n_cells), outers=[])


class TestCarlesonFunctional:

    def test_zero_for_equal_fields(self, lab):
        identity = CoefficientField.identity(lab.domain)
        report = carleson_functional(lab.operator, disagreement(identity, identity), lab.family)
        assert report.value == 0.0
        assert report.sigma_value == 0.0

    def test_quadratic_in_amplitude(self, lab):
        identity = CoefficientField.identity(lab.domain)
        small = carleson_functional(lab.operator, disagreement(_bump(lab, 0.1), identity), lab.family)
        large = carleson_functional(lab.operator, disagreement(_bump(lab, 0.2), identity), lab.family)

        assert small.value > 0
        assert large.value == pytest.approx(4.0 * small.value, rel=1e-9)
        assert large.sigma_value == pytest.approx(4.0 * small.sigma_value, rel=1e-9)

    def test_sigma_functional_argmax(self, lab):
        identity = CoefficientField.identity(lab.domain)
        rho = disagreement(_bump(lab, 0.2), identity)
        value, index = sigma_functional(rho, lab.family)
        assert value > 0
        assert 0 <= index < len(lab.family)

    def test_report_dict(self, lab):
        identity = CoefficientField.identity(lab.domain)
        report = carleson_functional(lab.operator, disagreement(_bump(lab, 0.2), identity), lab.family)
        summary = report.as_dict()
        assert summary["functional"] == "carleson"
        assert set(summary["argmax_ball"]) == {"outer", "inner"}


class TestConical:

    def test_aperture_must_be_positive(self, lab):
        identity = CoefficientField.identity(lab.domain)
        with pytest.raises(ValueError, match="aperture"):
            conical_functional(disagreement(identity, identity), lab.domain, aperture=0.0)

    def test_conical_and_fubini(self, lab):
        identity = CoefficientField.identity(lab.domain)
        rho = disagreement(_bump(lab, 0.2), identity)
        omega = lab.operator.elliptic_measure(lab.pole)
        conical = conical_functional(rho, lab.domain, omega=omega)

        assert conical.values.shape == (lab.domain.n_boundary,)
        assert conical.omega_sup <= conical.sigma_sup
        link = fubini_link(rho, lab.family, conical)
        assert np.isfinite(link.worst_ratio)
        assert link.dilation == pytest.approx(3.0)


class TestGamma:

    def test_zero_for_equal_fields(self, lab):
        omega = lab.operator.elliptic_measure(lab.pole)
        gamma = gamma_coefficients(lab.operator, CoefficientField.identity(lab.domain),
                                   lab.regions, omega)
        assert gamma.shape == (len(lab.grid.cubes),)
        assert np.all(gamma == 0.0)

    def test_bound_check(self, lab):
        report = carleson_bound_check(lab.operator, _bump(lab, 0.2), lab.regions, lab.family,
                                      lab.top.id)
        assert report.norm > 0
        assert report.kappa >= 0
        assert report.root == lab.top.id


class TestReverseHoelder:

    def test_density_needs_positive_reference(self):
        with pytest.raises(DensityError):
            rn_density(np.ones(4), np.array([1.0, 0.0, 1.0, 1.0]))

    def test_exponent_must_exceed_one(self, lab):
        ones = np.ones(lab.domain.n_boundary)
        with pytest.raises(ValueError, match="exceed 1"):
            rh_constant(ones, lab.domain.sigma, 1.0, lab.family)

    def test_constant_density(self, lab):
        ones = np.ones(lab.domain.n_boundary)
        report = rh_constant(ones, lab.domain.sigma, 2.0, lab.family)
        assert report.constant == pytest.approx(1.0, abs=1e-12)
        assert report.as_dict()["p"] == 2.0

    def test_compose(self):
        r, bound = compose_rh(2.0, 2.0, 1.5, 4.0)
        assert r == pytest.approx(4.0 / 3.0)
        assert bound == pytest.approx(1.5 * 4.0 ** 0.5)
        with pytest.raises(ValueError):
            compose_rh(1.0, 2.0, 1.0, 1.0)

    def test_composition_pipeline(self, lab):
        perturbed = lab.operator_for(_bump(lab, 0.2))
        report = composition_pipeline(lab.operator, perturbed, lab.pole, lab.family)
        assert report.r == pytest.approx(4.0 / 3.0)
        assert 1.0 <= report.measured <= report.bound * (1 + 1e-9)

    def test_sweep_threads_match_serial(self, lab):
        perturbed = [lab.operator_for(_bump(lab, eps)) for eps in (0.1, 0.2)]
        serial = rh_sweep(lab.operator, perturbed, lab.pole, lab.family, 2.0)
        pooled = rh_sweep(lab.operator, perturbed, lab.pole, lab.family, 2.0, threads=2)
        assert [r.constant for r in serial] == pytest.approx([r.constant for r in pooled])
