"""
Localized square function, non-tangential maximal function and the
functionals built from them, plus the boundary measure ``nu`` assembled from
a sawtooth elliptic measure.

Cones are unions of Whitney regions: the cone at a boundary face ``x`` under
``Q0`` joins ``U_Q'`` over the cubes ``x in Q' in D_{Q0}``. Every face of a
finest cube sees the same cone, so cones are built once per leaf.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.coefficients import CoefficientField
from core.dyadic_grid import DyadicCube
from core.elliptic_solver import EllipticOperator, cell_gradient
from core.error_handler import CoverageError, MeasureError, PoleError, ResolutionError
from core.sawtooth import ProjectionPatch, WhitneyRegions
from logic.perturbation import BallFamily, green_weighted_sup


logger = logging.getLogger(__name__)

# stand-in for log(0) when an empty good-lambda set enters the regression
EMPTY_RATIO_FLOOR = 1e-6


# ---------------------------------------------------------------------- cones

@dataclass
class DyadicCone:
    """Cone of one boundary face below a root cube."""
    vertex: int
    root: int
    cubes: List[int]
    cells: np.ndarray
    starred_cells: np.ndarray
    truncation: Optional[int] = None


class ConeFamily:
    """Cones ``Gamma_{Q0}(x)`` for every face ``x`` of the root, optionally truncated."""

    def __init__(self, regions: WhitneyRegions, root: DyadicCube, truncation: Optional[int] = None):
        self.regions = regions
        self.grid = regions.grid
        self.domain = regions.domain
        self.root = root
        self.truncation = truncation
        self.leaves = [q for q in self.grid.descendants(root) if not q.children]
        self._chains: Dict[int, List[int]] = {}
        self._cells: Dict[int, np.ndarray] = {}
        self._starred: Dict[int, np.ndarray] = {}
        for leaf in self.leaves:
            chain = []
            cube: Optional[DyadicCube] = leaf
            while cube is not None:
                if truncation is None or cube.k - root.k <= truncation:
                    chain.append(cube.id)
                if cube.id == root.id:
                    break
                cube = self.grid.parent(cube)
            self._chains[leaf.id] = chain[::-1]
        logger.debug(
            f"Cone family under cube {root.id}: {len(self.leaves)} leaves, truncation={truncation}"
        )

    def _union(self, leaf: int, factor: float) -> np.ndarray:
        store = self._cells if factor == 1.0 else self._starred
        if leaf not in store:
            parts = [self.regions.region(self.grid.cubes[q], factor) for q in self._chains[leaf]]
            store[leaf] = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        return store[leaf]

    def cone(self, face: int) -> DyadicCone:
        """Cone at ``face``; empty when the face lies outside the root."""
        leaf = self.grid.leaf_of(face)
        if leaf.id not in self._chains:
            empty = np.zeros(0, dtype=np.int64)
            return DyadicCone(face, self.root.id, [], empty, empty, self.truncation)
        return DyadicCone(
            vertex=face, root=self.root.id, cubes=list(self._chains[leaf.id]),
            cells=self._union(leaf.id, 1.0), starred_cells=self._union(leaf.id, 2.0),
            truncation=self.truncation,
        )

    def _check_coverage(self, cells: np.ndarray, solved: Optional[np.ndarray], leaf: int) -> None:
        if solved is not None and not np.all(solved[cells]):
            missing = int(np.sum(~solved[cells]))
            raise CoverageError(
                f"Cone of leaf {leaf} under cube {self.root.id} needs {missing} unsolved cells"
            )

    def square_function(self, u: np.ndarray, data: Optional[np.ndarray] = None,
                        solved: Optional[np.ndarray] = None) -> np.ndarray:
        """
        ``S u(x) = (sum over the cone of |grad u|**2 delta**(2-d) h**d)**(1/2)`` per face.

        Raises:
            CoverageError: If a cone reaches cells outside ``solved``
        """
        domain = self.domain
        grad = cell_gradient(domain, u, boundary=data)
        weight = np.sum(grad ** 2, axis=1) * domain.delta ** (2 - domain.dim) * domain.cell_volume
        values = np.zeros(domain.n_boundary)
        for leaf in self.leaves:
            cells = self._union(leaf.id, 1.0)
            self._check_coverage(cells, solved, leaf.id)
            values[leaf.members] = np.sqrt(weight[cells].sum())
        return values

    def nontangential_max(self, u: np.ndarray, solved: Optional[np.ndarray] = None) -> np.ndarray:
        """
        ``N u(x) = max of |u|`` over the fattened cone, per face.

        Raises:
            CoverageError: If a cone reaches cells outside ``solved``
        """
        values = np.zeros(self.domain.n_boundary)
        magnitude = np.abs(np.asarray(u, dtype=float))
        for leaf in self.leaves:
            cells = self._union(leaf.id, 2.0)
            self._check_coverage(cells, solved, leaf.id)
            values[leaf.members] = magnitude[cells].max(initial=0.0)
        return values


def square_function(regions: WhitneyRegions, root: DyadicCube, u: np.ndarray,
                    data: Optional[np.ndarray] = None, truncation: Optional[int] = None,
                    solved: Optional[np.ndarray] = None) -> np.ndarray:
    return ConeFamily(regions, root, truncation).square_function(u, data, solved)


def nontangential_max(regions: WhitneyRegions, root: DyadicCube, u: np.ndarray,
                      solved: Optional[np.ndarray] = None) -> np.ndarray:
    return ConeFamily(regions, root).nontangential_max(u, solved)


def _lq_norm(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    return float(np.sum(np.abs(values) ** q * weights) ** (1.0 / q))


def random_boundary_data(domain, count: int, seed: int = 0, bumps: int = 4,
                         width: float = 0.1) -> List[np.ndarray]:
    """Smooth random face data: sums of Gaussian bumps centred on random faces."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        centers = domain.boundary_points[rng.integers(0, domain.n_boundary, size=bumps)]
        amplitude = rng.uniform(-1.0, 1.0, size=bumps)
        offsets = np.linalg.norm(domain.boundary_points[:, None, :] - centers[None], axis=2)
        out.append(np.exp(-0.5 * (offsets / width) ** 2) @ amplitude)
    return out


# ---------------------------------------------------------------------- CME

@dataclass
class CMEReport:
    value: float
    normalized: float
    sup_norm: float
    argmax: Dict[str, object] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"functional": "cme", "value": self.value, "normalized": self.normalized,
                "sup_norm": self.sup_norm, "argmax_ball": self.argmax}


def cme_functional(operator: EllipticOperator, family: BallFamily, u: np.ndarray,
                   data: Optional[np.ndarray] = None) -> CMEReport:
    """Green-weighted energy of ``u`` over the ball family, also divided by ``||u||_inf**2``."""
    domain = operator.domain
    grad = cell_gradient(domain, u, boundary=data)
    integrand = np.sum(grad ** 2, axis=1) * domain.cell_volume
    sup_norm = float(np.abs(u).max(initial=0.0))
    if data is not None:
        sup_norm = max(sup_norm, float(np.abs(data).max(initial=0.0)))
    if not np.any(integrand > 0):
        return CMEReport(value=0.0, normalized=0.0, sup_norm=sup_norm)
    sup = green_weighted_sup(operator, family, integrand)
    normalized = sup.value / sup_norm ** 2 if sup_norm > 0 else 0.0
    logger.info(f"CME functional {sup.value:.4e}, normalized {normalized:.4e}")
    return CMEReport(value=sup.value, normalized=normalized, sup_norm=sup_norm,
                     argmax={"outer": sup.outer, "inner": family.describe(sup.inner)})


# ---------------------------------------------------------------------- S versus N

@dataclass
class GoodLambdaFit:
    """``left <= K (gamma/beta)**theta right`` fitted over a (beta, gamma, lambda) lattice."""
    theta: float
    constant: float
    residual: float
    points: int
    table: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class SvsNReport:
    q: float
    constant: float
    ratios: List[float]
    root: int
    pole: List[float]
    good_lambda: Optional[GoodLambdaFit] = None

    def as_dict(self) -> dict:
        fit = self.good_lambda
        return {
            "functional": "s_vs_n", "q": self.q, "value": self.constant, "root": self.root,
            "pole": self.pole, "samples": len(self.ratios),
            "theta": fit.theta if fit else None, "good_lambda_constant": fit.constant if fit else None,
        }


def good_lambda_fit(pairs: Sequence[tuple], weights: np.ndarray, betas: Sequence[float],
                    gammas: Sequence[float], quantiles: Sequence[float] = (0.25, 0.5, 0.75)
                    ) -> GoodLambdaFit:
    """
    Evaluate ``w{S > (1+beta) lambda, N <= gamma lambda} / w{S > lambda}`` over the
    lattice and regress its logarithm on ``log(gamma / beta)``.
    """
    table = []
    for S, N in pairs:
        positive = S[S > 0]
        if positive.size == 0:
            continue
        for lam in np.quantile(positive, quantiles):
            right = float(weights[S > lam].sum())
            if right <= 0:
                continue
            for beta in betas:
                for gamma in gammas:
                    left = float(weights[(S > (1 + beta) * lam) & (N <= gamma * lam)].sum())
                    table.append({"beta": float(beta), "gamma": float(gamma), "lambda": float(lam),
                                  "ratio": left / right})
    if len({(row["beta"], row["gamma"]) for row in table}) < 2:
        return GoodLambdaFit(theta=np.nan, constant=np.nan, residual=np.nan, points=len(table),
                             table=table)
    x = np.log([row["gamma"] / row["beta"] for row in table])
    ratio = np.array([row["ratio"] for row in table])
    y = np.log(np.maximum(ratio, EMPTY_RATIO_FLOOR))
    theta, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (theta * x + intercept)) ** 2)))
    constant = float(np.max(ratio / np.exp(theta * x)))
    return GoodLambdaFit(theta=float(theta), constant=constant, residual=residual,
                         points=len(table), table=table)


def s_vs_n(operator: EllipticOperator, regions: WhitneyRegions, root: DyadicCube,
           data_family: Sequence[np.ndarray], q: float = 2.0,
           betas: Sequence[float] = (0.1, 0.25, 0.5),
           gammas: Sequence[float] = (0.01, 0.05, 0.25, 1.0, 4.0)) -> SvsNReport:
    """
    Largest ``||S u||_q / ||N u||_q`` over the data family, both norms taken in
    ``L^q(Q0, omega^{X_Q0})``, with the good-lambda lattice fit.
    """
    pole = regions.grid.corkscrew(root.id).point
    omega = operator.elliptic_measure(pole)
    weights = omega.values[root.members]
    cones = ConeFamily(regions, root)
    ratios, pairs = [], []
    for data in data_family:
        u = operator.solve_dirichlet(data)
        S = cones.square_function(u, data)[root.members]
        N = cones.nontangential_max(u)[root.members]
        top, bottom = _lq_norm(S, weights, q), _lq_norm(N, weights, q)
        if bottom > 0:
            ratios.append(top / bottom)
        elif top > 0:
            ratios.append(np.inf)
        else:
            ratios.append(0.0)
        pairs.append((S, N))
    constant = float(max(ratios)) if ratios else 0.0
    fit = good_lambda_fit(pairs, weights, betas, gammas)
    logger.info(
        f"S vs N under cube {root.id}: C_{q:g}={constant:.4g} over {len(ratios)} solutions, "
        f"good-lambda theta={fit.theta:.3g}"
    )
    return SvsNReport(q=q, constant=constant, ratios=[float(r) for r in ratios], root=root.id,
                      pole=omega.pole.tolist(), good_lambda=fit)


@dataclass
class DataBoundReport:
    q: float
    constant: float
    ratios: List[float]


def nontangential_data_check(operator: EllipticOperator, regions: WhitneyRegions,
                             root: DyadicCube, samples: int = 10, q: float = 2.0,
                             seed: int = 0) -> DataBoundReport:
    """``||N u||_{L^q(Q0, omega)} / ||f||_{L^q(omega)}`` for random data supported in ``2 Delta~_Q0``."""
    grid = regions.grid
    domain = operator.domain
    omega = operator.elliptic_measure(grid.corkscrew(root.id).point).values
    support = domain.surface_ball(root.x, 2.0 * grid.xi * root.radius)
    cones = ConeFamily(regions, root)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(samples):
        data = np.zeros(domain.n_boundary)
        data[support] = rng.uniform(0.5, 1.5, size=support.size)
        N = cones.nontangential_max(operator.solve_dirichlet(data))
        ratios.append(_lq_norm(N[root.members], omega[root.members], q) / _lq_norm(data, omega, q))
    return DataBoundReport(q=q, constant=float(max(ratios)), ratios=ratios)


# ---------------------------------------------------------------------- sawtooth measure

@dataclass
class SawtoothNu:
    """``nu`` on the faces of ``Omega`` (zero outside ``Q0``) and its ingredients."""
    pole: np.ndarray
    values: np.ndarray
    omega_star: np.ndarray
    omega: np.ndarray
    matched: np.ndarray
    patches: List[ProjectionPatch]
    family: List[int]
    root: int

    def of(self, faces: np.ndarray) -> float:
        return float(self.values[np.asarray(faces, dtype=np.int64)].sum())


def sawtooth_operator(operator: EllipticOperator, regions: WhitneyRegions,
                      family: Sequence[DyadicCube], root: DyadicCube) -> EllipticOperator:
    """The operator restricted to ``Omega_{F,Q0}``, assembled with the region's own boundary."""
    region = regions.sawtooth(family, root)
    if region.empty:
        raise ResolutionError(f"Sawtooth over cube {root.id} has no cells")
    saw = regions.region_domain(region)
    to_domain = regions.domain.cell_index[tuple(saw.cells.T)]
    field = CoefficientField(saw, operator.field.matrices[to_domain],
                             name=f"{operator.field.name}-sawtooth")
    return EllipticOperator(
        saw, field, tolerance=operator.tolerance, direct_limit=operator.direct_limit,
        krylov=operator.krylov, max_iterations=operator.max_iterations,
        max_ellipticity=operator.max_ellipticity,
        pole_clearance_cells=int(round(operator.pole_clearance / saw.h)), threads=operator.threads,
    )


def djk_nu(operator: EllipticOperator, regions: WhitneyRegions, family: Sequence[DyadicCube],
           root: DyadicCube) -> SawtoothNu:
    """
    Sawtooth elliptic measure off the family, and on each member ``Q_i`` the
    ``omega_L``-distribution of the patch mass ``omega_*(P_i)``.

    Raises:
        ResolutionError: If the sawtooth is too thin to hold an admissible pole
    """
    domain = operator.domain
    saw_op = sawtooth_operator(operator, regions, family, root)
    saw = saw_op.domain
    corkscrew = regions.common_corkscrew(family, root)
    try:
        omega_star = saw_op.elliptic_measure(corkscrew.point).values
    except PoleError as e:
        raise ResolutionError(f"Sawtooth over cube {root.id} is too thin to solve: {e}") from e
    omega = operator.elliptic_measure(corkscrew.point).values

    to_domain = domain.cell_index[tuple(saw.cells.T)]
    matched = domain.face_index[to_domain[saw.face_owner], saw.face_axis, saw.face_side]

    in_root = np.zeros(domain.n_boundary, dtype=bool)
    in_root[root.members] = True
    in_family = np.zeros(domain.n_boundary, dtype=bool)
    for cube in family:
        in_family[cube.members] = True

    values = np.zeros(domain.n_boundary)
    keep = matched >= 0
    np.add.at(values, matched[keep], omega_star[keep])
    values[~in_root | in_family] = 0.0

    patches, _ = regions.projection_patches(family, root) if family else ([], 0)
    patch_of = {p.cube: p for p in patches}
    for cube in family:
        patch = patch_of.get(cube.id)
        base = omega[cube.members].sum()
        if patch is None or base <= 0:
            logger.warning(f"Cube {cube.id} carries no nu mass (no projection patch)")
            continue
        values[cube.members] = omega[cube.members] / base * omega_star[patch.faces].sum()

    logger.info(
        f"nu over cube {root.id}: family {len(family)}, total {values.sum():.4f}, "
        f"sawtooth pole clearance {corkscrew.sawtooth_clearance:.3g}"
    )
    return SawtoothNu(pole=corkscrew.point, values=values, omega_star=omega_star, omega=omega,
                      matched=matched, patches=patches, family=[c.id for c in family],
                      root=root.id)


@dataclass
class DJKReport:
    """Two-sided comparison of ``nu`` ratios with ``omega_L`` ratios over sampled ``F in Q``."""
    upper_constant: float
    theta: float
    lower_constant: float
    residual: float
    samples: int
    pairs: List[Dict[str, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"functional": "djk", "upper_constant": self.upper_constant, "theta": self.theta,
                "lower_constant": self.lower_constant, "residual": self.residual,
                "samples": self.samples}


def djk_bounds_check(nu: SawtoothNu, regions: WhitneyRegions, samples: int = 30,
                     seed: int = 0) -> DJKReport:
    """
    Sample cubes ``Q`` below the root and sets ``F`` made of finest cubes of
    ``Q`` carrying ``nu`` mass; fit the upper constant and the exponent ``theta``.

    Raises:
        MeasureError: If no cube carries both measures
    """
    grid = regions.grid
    root = grid.cubes[nu.root]
    rng = np.random.default_rng(seed)

    def leaves_with_mass(cube: DyadicCube) -> List[DyadicCube]:
        return [d for d in grid.descendants(cube) if not d.children
                and nu.of(d.members) > 0 and nu.omega[d.members].sum() > 0]

    candidates = [q for q in grid.descendants(root) if leaves_with_mass(q)]
    if not candidates:
        raise MeasureError(f"No cube below {root.id} carries nu mass")

    pairs = []
    for _ in range(samples):
        cube = candidates[int(rng.integers(len(candidates)))]
        leaves = leaves_with_mass(cube)
        size = int(rng.integers(1, len(leaves) + 1))
        picked = rng.choice(len(leaves), size=size, replace=False)
        faces = np.concatenate([leaves[i].members for i in picked])
        w = float(nu.omega[faces].sum() / nu.omega[cube.members].sum())
        v = nu.of(faces) / nu.of(cube.members)
        pairs.append({"cube": cube.id, "leaves": size, "omega_ratio": w, "nu_ratio": v})

    w = np.array([p["omega_ratio"] for p in pairs])
    v = np.array([p["nu_ratio"] for p in pairs])
    upper = float(np.max(v / w))
    proper = w < 1.0 - 1e-12
    if np.unique(w[proper]).size >= 2:
        theta, intercept = np.polyfit(np.log(w), np.log(v), 1)
        residual = float(np.sqrt(np.mean((np.log(v) - (theta * np.log(w) + intercept)) ** 2)))
    else:
        theta, residual = 1.0, 0.0
    lower = float(np.max(w ** theta / v))
    report = DJKReport(upper_constant=upper, theta=float(theta), lower_constant=lower,
                       residual=residual, samples=len(pairs), pairs=pairs)
    logger.info(f"nu bounds: upper {upper:.3f}, theta {theta:.3f}, lower constant {lower:.3f}")
    return report
