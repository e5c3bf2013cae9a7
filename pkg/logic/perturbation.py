"""
Disagreement between two coefficient fields and the functionals built on it.

Suprema over balls are taken over a fixed family: centres at dyadic cube
centres, radii ``l(Q) * 2**(-j / per_octave)``. Integrals are cell sums.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from core.coefficients import CoefficientField
from core.cube_tree import CubeTree
from core.domain import GridDomain
from core.dyadic_grid import DyadicGrid
from core.elliptic_solver import EllipticMeasure, EllipticOperator
from core.error_handler import DensityError, MeasureError, PoleError, ResolutionError
from core.sawtooth import WhitneyRegions
from logic.carleson import carleson_norm


logger = logging.getLogger(__name__)

COMPOSITION_SLACK = 1e-9


# ---------------------------------------------------------------------- disagreement

@dataclass
class DisagreementField:
    """``rho(X) = sup of |A - A0|`` over ``B(X, delta(X)/2)``, per interior cell."""
    values: np.ndarray

    @property
    def maximum(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values > 0)


def disagreement(field_a: CoefficientField, field_b: CoefficientField) -> DisagreementField:
    """Cellwise disagreement; symmetric in its arguments."""
    domain = field_a.domain
    gap = field_a.difference(field_b)
    values = np.zeros(domain.n_cells)
    support = np.flatnonzero(gap > 0)
    if support.size:
        tree = cKDTree(domain.centers[support])
        reach = np.maximum(0.5 * domain.delta * (1 - 1e-12), 0.0)
        hits = tree.query_ball_point(domain.centers, reach)
        for cell, found in enumerate(hits):
            if found:
                values[cell] = gap[support[found]].max()
    logger.debug(f"Disagreement: max {values.max():.4g}, support {int(np.sum(values > 0))} cells")
    return DisagreementField(values=values)


# ---------------------------------------------------------------------- ball family

class BallFamily:
    """Boundary-centred balls with precomputed cell and face incidence."""

    def __init__(self, domain: GridDomain, centers: np.ndarray, radii: np.ndarray,
                 cubes: Sequence[int], c0: float = 1.0):
        if len(radii) == 0:
            raise ResolutionError(f"No admissible balls on '{domain.name}' at this resolution")
        self.domain = domain
        self.centers = np.asarray(centers, dtype=float)
        self.radii = np.asarray(radii, dtype=float)
        self.cubes = list(cubes)
        self.c0 = c0
        self.cells = self._incidence(domain.cell_tree, domain.n_cells)
        self.faces = self._incidence(domain.boundary_tree, domain.n_boundary)
        self.face_tree = cKDTree(self.centers)
        logger.info(f"Ball family on '{domain.name}': {len(self)} balls, c0={c0:.3f}")

    def _incidence(self, tree: cKDTree, size: int) -> csr_matrix:
        rows, cols = [], []
        for index, (x, r) in enumerate(zip(self.centers, self.radii)):
            hits = tree.query_ball_point(x, r * (1 - 1e-12))
            rows.append(np.full(len(hits), index, dtype=np.int64))
            cols.append(np.asarray(hits, dtype=np.int64))
        data = np.ones(sum(len(c) for c in cols))
        return csr_matrix((data, (np.concatenate(rows), np.concatenate(cols))),
                          shape=(len(self.radii), size))

    @classmethod
    def from_grid(cls, grid: DyadicGrid, per_octave: int = 2,
                  min_cells: float = 1.0) -> "BallFamily":
        """
        Balls at ``per_octave`` radii per cube length; the finest generation also
        reaches down to ``min_cells`` lattice steps.
        """
        domain = grid.domain
        centers, radii, cubes = [], [], []
        seen = set()
        for cube in grid.cubes:
            steps = 3 * per_octave if cube.k == grid.k_max else per_octave
            for j in range(steps):
                r = cube.length * 2.0 ** (-j / per_octave)
                if r < min_cells * domain.h or r >= domain.diameter:
                    continue
                key = (cube.center_point, round(r, 12))
                if key in seen:
                    continue
                seen.add(key)
                centers.append(cube.x)
                radii.append(r)
                cubes.append(cube.id)
        c0 = min((grid.corkscrew(c.id).constant for c in grid.cubes), default=1.0)
        return cls(domain, np.array(centers).reshape(-1, domain.dim), np.array(radii), cubes, c0)

    def __len__(self) -> int:
        return len(self.radii)

    def integrate(self, cell_values: np.ndarray) -> np.ndarray:
        """Cell sum of ``cell_values`` over every ball."""
        return self.cells @ cell_values

    def measure(self, face_values: np.ndarray) -> np.ndarray:
        """Face sum of ``face_values`` over every surface ball."""
        return self.faces @ face_values

    def inner(self, x0: np.ndarray, r0: float) -> np.ndarray:
        """Balls ``B(x, r)`` with ``x`` in ``2 Delta0`` and ``r < r0 c0 / 4``."""
        near = np.zeros(len(self), dtype=bool)
        near[self.face_tree.query_ball_point(x0, 2.0 * r0 * (1 - 1e-12))] = True
        return np.flatnonzero(near & (self.radii < r0 * self.c0 / 4.0))

    def describe(self, index: int) -> Dict[str, object]:
        return {"x": self.centers[index].tolist(), "r": float(self.radii[index]),
                "cube": int(self.cubes[index])}


# ---------------------------------------------------------------------- green-weighted suprema

@dataclass
class GreenWeightedSup:
    """Supremum of ``(1/omega^{X_Delta0}(Delta)) sum over B of f G(X_Delta0, .)``."""
    value: float
    outer: Dict[str, object]
    inner: int
    per_outer: List[float] = field(default_factory=list)
    c0: float = 1.0


def _outer_pole(operator: EllipticOperator, x0: np.ndarray, r0: float) -> int:
    radius = min(r0, 0.999 * operator.domain.diameter)
    return operator.pole_cell(operator.domain.corkscrew(x0, radius).point)


def green_weighted_sup(operator: EllipticOperator, family: BallFamily, integrand: np.ndarray,
                       outers: Optional[Sequence[Tuple[np.ndarray, float]]] = None) -> GreenWeightedSup:
    """
    Supremum over outer balls ``B0 = (x0, r0)`` (default: the family itself) and inner family balls.

    ``integrand`` already carries the cell volume. One adjoint solve per outer
    ball gives both ``G(X_Delta0, .)`` and ``omega^{X_Delta0}``.

    Raises:
        ResolutionError: If no (outer, inner) pair is admissible
    """
    balls = list(zip(family.centers, family.radii)) if outers is None else list(outers)
    jobs: List[Tuple[int, int, np.ndarray]] = []
    for index, (x0, r0) in enumerate(balls):
        nested = family.inner(np.asarray(x0, dtype=float), float(r0))
        if nested.size == 0:
            continue
        try:
            cell = _outer_pole(operator, np.asarray(x0, dtype=float), float(r0))
        except PoleError:
            continue
        jobs.append((index, cell, nested))
    if not jobs:
        raise ResolutionError("No admissible ball pairs for the Green-weighted functional")

    units = []
    for _, cell, _ in jobs:
        e = np.zeros(operator.domain.n_cells)
        e[cell] = 1.0
        units.append(e)
    adjoints = operator.solve_many(units, transpose=True)

    best = GreenWeightedSup(value=-np.inf, outer={}, inner=-1, c0=family.c0)
    for (index, _, nested), green in zip(jobs, adjoints):
        omega = -(operator.B.T @ green)
        numer = family.cells[nested] @ (integrand * green)
        denom = family.faces[nested] @ omega
        ratios = np.where(denom > 0, numer / np.where(denom > 0, denom, 1.0), 0.0)
        local = int(np.argmax(ratios))
        best.per_outer.append(float(ratios[local]))
        if ratios[local] > best.value:
            best.value, best.inner = float(ratios[local]), int(nested[local])
            best.outer = {"x": np.asarray(balls[index][0], float).tolist(), "r": float(balls[index][1])}
    return best


# ---------------------------------------------------------------------- Carleson functionals

@dataclass
class FunctionalReport:
    """Global, local and surface-measure forms of the disagreement functional."""
    value: float
    sigma_value: float
    argmax: Dict[str, object]
    sigma_argmax: Dict[str, object]
    local: List[float]
    c0: float

    def as_dict(self) -> dict:
        return {"functional": "carleson", "value": self.value, "sigma_value": self.sigma_value,
                "argmax_ball": self.argmax, "sigma_argmax_ball": self.sigma_argmax, "c0": self.c0}


def carleson_integrand(rho: DisagreementField, domain: GridDomain, power: int = 2) -> np.ndarray:
    """``rho**2 / delta**power`` times the cell volume."""
    return rho.values ** 2 / domain.delta ** power * domain.cell_volume


def sigma_functional(rho: DisagreementField, family: BallFamily) -> Tuple[float, int]:
    """``sup over B of (1/sigma(Delta)) sum over B of rho**2 / delta``."""
    domain = family.domain
    numer = family.integrate(carleson_integrand(rho, domain, power=1))
    denom = family.measure(domain.sigma)
    ratios = numer / denom
    index = int(np.argmax(ratios))
    return float(ratios[index]), index


def local_functional(base: EllipticOperator, rho: DisagreementField, family: BallFamily,
                     x0: Sequence[float], r0: float) -> GreenWeightedSup:
    """The functional localised to ``B0 = B(x0, r0)``."""
    outer = [(np.asarray(x0, dtype=float), float(r0))]
    return green_weighted_sup(base, family, carleson_integrand(rho, base.domain), outers=outer)


def carleson_functional(base: EllipticOperator, rho: DisagreementField,
                        family: BallFamily) -> FunctionalReport:
    """Global functional over every outer ball of the family, plus its surface-measure form."""
    if rho.maximum == 0:
        zero = family.describe(0)
        return FunctionalReport(0.0, 0.0, {"outer": zero, "inner": zero}, zero, [], family.c0)
    sup = green_weighted_sup(base, family, carleson_integrand(rho, base.domain))
    sigma_value, sigma_index = sigma_functional(rho, family)
    report = FunctionalReport(
        value=sup.value, sigma_value=sigma_value,
        argmax={"outer": sup.outer, "inner": family.describe(sup.inner)},
        sigma_argmax=family.describe(sigma_index), local=sup.per_outer, c0=family.c0,
    )
    logger.info(f"Carleson functional {report.value:.4e} (sigma form {report.sigma_value:.4e})")
    return report


# ---------------------------------------------------------------------- conical functional

@dataclass
class ConicalReport:
    values: np.ndarray
    sigma_sup: float
    omega_sup: float
    aperture: float


def conical_functional(rho: DisagreementField, domain: GridDomain, aperture: float = 1.0,
                       omega: Optional[EllipticMeasure] = None) -> ConicalReport:
    """
    ``sqrt(sum over the cone at x of rho**2 / delta**d)`` for every boundary face.

    The cone at ``x`` holds the cells with ``|Y - x| < (1 + aperture) delta(Y)``.
    """
    if aperture <= 0:
        raise ValueError(f"Cone aperture must be positive, got {aperture}")
    squared = np.zeros(domain.n_boundary)
    weight = rho.values ** 2 / domain.delta ** domain.dim * domain.cell_volume
    for cell in rho.support:
        reach = (1.0 + aperture) * domain.delta[cell] * (1 - 1e-12)
        faces = domain.boundary_tree.query_ball_point(domain.centers[cell], reach)
        squared[faces] += weight[cell]
    values = np.sqrt(squared)
    omega_sup = float(values[omega.values > 0].max()) if omega is not None else float(values.max())
    return ConicalReport(values=values, sigma_sup=float(values.max()), omega_sup=omega_sup,
                         aperture=aperture)


@dataclass
class FubiniLink:
    """Solid integral of ``rho**2/delta`` against the surface integral of the conical functional squared."""
    lhs: np.ndarray
    rhs: np.ndarray
    dilation: float

    @property
    def worst_ratio(self) -> float:
        ratio = np.where(self.rhs > 0, self.lhs / np.where(self.rhs > 0, self.rhs, 1.0),
                         np.where(self.lhs > 0, np.inf, 0.0))
        return float(ratio.max())


def fubini_link(rho: DisagreementField, family: BallFamily, conical: ConicalReport) -> FubiniLink:
    """Compare both sides on every ball, the surface side over ``(2 + aperture) Delta``."""
    domain = family.domain
    dilation = 2.0 + conical.aperture
    lhs = family.integrate(carleson_integrand(rho, domain, power=1))
    density = conical.values ** 2 * domain.sigma
    rhs = np.array([density[domain.surface_ball(x, dilation * r)].sum()
                    for x, r in zip(family.centers, family.radii)])
    return FubiniLink(lhs=lhs, rhs=rhs, dilation=dilation)


# ---------------------------------------------------------------------- gamma coefficients

@dataclass
class GammaReport:
    gamma: np.ndarray
    norm: float
    functional: float
    kappa: float
    root: int


def gamma_coefficients(base: EllipticOperator, perturbed: CoefficientField,
                       regions: WhitneyRegions, omega: EllipticMeasure) -> np.ndarray:
    """``gamma_Q = omega0(Q) * sum over I in W*_Q of |A - A0|**2 on I*``."""
    grid = regions.grid
    gap = perturbed.difference(base.field)
    whitney = regions.whitney
    per_cube = np.array([gap[whitney.fattened_cells(i, 1.0)].max(initial=0.0) ** 2
                         for i in range(len(whitney.cubes))])
    masses = grid.cube_measure(omega.values)
    gamma = np.zeros(len(grid.cubes))
    for cube in grid.cubes:
        gamma[cube.id] = masses[cube.id] * per_cube[regions.members[cube.id]].sum()
    return gamma


def carleson_bound_check(base: EllipticOperator, perturbed: CoefficientField,
                         regions: WhitneyRegions, family: BallFamily, root: int,
                         tree: Optional[CubeTree] = None) -> GammaReport:
    """
    Carleson norm of ``gamma`` under ``root`` against the local functional of
    ``B0 = B(x_root, 4 l(root))``; ``kappa`` is their ratio.
    """
    grid = regions.grid
    cube = grid.cubes[root]
    domain = base.domain
    r0 = min(4.0 * cube.length, 0.999 * domain.diameter)
    pole = domain.corkscrew(cube.x, r0).point
    omega = base.elliptic_measure(pole)
    gamma = gamma_coefficients(base, perturbed, regions, omega)
    tree = tree or CubeTree.from_grid(grid)
    norm = carleson_norm(tree, gamma, tree.mass(omega.values), root)
    rho = disagreement(perturbed, base.field)
    functional = local_functional(base, rho, family, cube.x, r0).value if rho.maximum > 0 else 0.0
    kappa = norm / functional if functional > 0 else 0.0
    logger.info(f"Gamma norm {norm:.4e} vs local functional {functional:.4e}: kappa={kappa:.4g}")
    return GammaReport(gamma=gamma, norm=float(norm), functional=float(functional),
                       kappa=float(kappa), root=root)


# ---------------------------------------------------------------------- reverse Hoelder

@dataclass
class RHReport:
    exponent: float
    constant: float
    argmax: Dict[str, object]
    table: np.ndarray

    def as_dict(self) -> dict:
        return {"functional": "reverse_hoelder", "p": self.exponent, "value": self.constant,
                "argmax_ball": self.argmax}


def rn_density(omega: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """
    Cellwise ``d omega / d reference``.

    Raises:
        DensityError: If the reference measure vanishes on a face
    """
    ref = np.asarray(reference, dtype=float)
    if np.any(ref <= 0):
        raise DensityError(f"Reference measure vanishes on {int(np.sum(ref <= 0))} faces")
    return np.asarray(omega, dtype=float) / ref


def rh_constant(density: np.ndarray, weights: np.ndarray, p: float,
                family: BallFamily) -> RHReport:
    """Largest ratio of the ``p``-mean to the mean of ``density`` over the surface balls."""
    if p <= 1:
        raise ValueError(f"Reverse Hoelder exponent must exceed 1, got {p}")
    mass = family.measure(weights)
    mean = family.measure(density * weights) / mass
    pmean = (family.measure(density ** p * weights) / mass) ** (1.0 / p)
    table = np.where(mean > 0, pmean / np.where(mean > 0, mean, 1.0), 1.0)
    index = int(np.argmax(table))
    return RHReport(exponent=p, constant=float(max(table[index], 1.0)),
                    argmax=family.describe(index), table=table)


@dataclass
class AInftyReport:
    exponents: List[float]
    constants: List[float]

    def largest_passing(self, threshold: float) -> Optional[float]:
        """Largest tested exponent whose constant stays below ``threshold``."""
        passing = [q for q, c in zip(self.exponents, self.constants) if c <= threshold]
        return max(passing) if passing else None


def ainfty_report(density: np.ndarray, weights: np.ndarray, exponents: Sequence[float],
                  family: BallFamily) -> AInftyReport:
    ordered = sorted(float(q) for q in exponents)
    return AInftyReport(exponents=ordered,
                        constants=[rh_constant(density, weights, q, family).constant for q in ordered])


def compose_rh(p: float, q: float, rh_q_reference: float, rh_p_sigma: float) -> Tuple[float, float]:
    """
    Exponent ``r = pq / (p + q - 1)`` and the bound ``C_q * C_p**(1/q')`` on
    the surface reverse Hoelder constant of the composed measure.
    """
    if p <= 1 or q <= 1:
        raise ValueError(f"Exponents must exceed 1, got p={p}, q={q}")
    r = p * q / (p + q - 1.0)
    dual = q / (q - 1.0)
    return r, rh_q_reference * rh_p_sigma ** (1.0 / dual)


@dataclass
class CompositionReport:
    p: float
    q: float
    r: float
    rh_q_reference: float
    rh_p_sigma: float
    bound: float
    measured: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def composition_pipeline(base: EllipticOperator, perturbed: EllipticOperator,
                         X: Sequence[float], family: BallFamily, p: float = 2.0,
                         q: float = 2.0) -> CompositionReport:
    """
    Measure both reverse Hoelder constants, compose them, and check the
    composed measure's surface constant against the bound.

    Raises:
        MeasureError: If the measured constant exceeds the bound
    """
    sigma = base.domain.sigma
    omega0 = base.elliptic_measure(X).values
    omega = perturbed.elliptic_measure(X).values
    rh_q = rh_constant(rn_density(omega, omega0), omega0, q, family).constant
    rh_p = rh_constant(rn_density(omega0, sigma), sigma, p, family).constant
    r, bound = compose_rh(p, q, rh_q, rh_p)
    measured = rh_constant(rn_density(omega, sigma), sigma, r, family).constant
    if measured > bound * (1 + COMPOSITION_SLACK):
        raise MeasureError(f"RH_{r:.4g}(sigma) constant {measured:.6f} exceeds bound {bound:.6f}")
    logger.info(f"RH composition r={r:.4g}: measured {measured:.4f} <= bound {bound:.4f}")
    return CompositionReport(p=p, q=q, r=r, rh_q_reference=rh_q, rh_p_sigma=rh_p,
                             bound=bound, measured=measured)


def rh_sweep(base: EllipticOperator, perturbed: Sequence[EllipticOperator], X: Sequence[float],
             family: BallFamily, p: float, threads: int = 1) -> List[RHReport]:
    """RH_p constant of each perturbed measure with respect to the base measure, in input order."""
    omega0 = base.elliptic_measure(X).values

    def one(op: EllipticOperator) -> RHReport:
        return rh_constant(rn_density(op.elliptic_measure(X).values, omega0), omega0, p, family)

    if threads <= 1:
        return [one(op) for op in perturbed]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, perturbed))
