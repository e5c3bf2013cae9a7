"""
Dyadic cubes on the discrete boundary.

Cubes are built from nested greedy nets: generation ``k`` uses separation
``2**-k``. Every cube is split among the next-generation net points it
contains by nearest-centre assignment, so the cubes of one generation
partition the boundary and each cube lies inside exactly one parent.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from core.domain import Corkscrew, GridDomain
from core.error_handler import DyadicRangeError, ResolutionError


logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12
SANDWICH_SLACK = 1.0 + 1e-9
# thin-boundary layers are measured up to twice the cube side
THIN_TAU_LIMIT = 1.0
MIN_GRID_RESOLUTION = 5


@dataclass
class DyadicCube:
    """One cube of the boundary lattice."""
    id: int
    k: int
    net_point: int
    center_point: int
    x: np.ndarray
    members: np.ndarray
    parent: int
    children: List[int]
    inner: float
    outer: float
    radius: float

    @property
    def length(self) -> float:
        """Side length ``2**-k``."""
        return 2.0 ** (-self.k)

    def __repr__(self) -> str:
        return f"<DyadicCube(id={self.id}, k={self.k}, size={self.members.size})>"


@dataclass
class ThinBoundaryFit:
    """Power-law fit of boundary-layer mass against the layer width."""
    eta: float
    constant: float
    taus: List[float]
    mean_ratios: List[float]


class DyadicGrid:
    """Nested dyadic cubes over the boundary points of a domain."""

    def __init__(self, domain: GridDomain, finest_scale_cells: int = 2,
                 k_max: Optional[int] = None):
        """
        Build the dyadic lattice.

        Args:
            domain: Domain whose boundary points are partitioned
            finest_scale_cells: The finest cubes have side at least this many cells
            k_max: Optional explicit finest generation

        Raises:
            ResolutionError: If the lattice cannot hold a single generation
        """
        if domain.resolution < MIN_GRID_RESOLUTION:
            raise ResolutionError(
                f"Resolution {domain.resolution} is too coarse for a dyadic grid "
                f"(needs {MIN_GRID_RESOLUTION})"
            )
        self.domain = domain
        self.points = domain.boundary_points
        self.weights = domain.sigma
        self.tree = domain.boundary_tree
        self.n_points = len(self.points)

        self.k_min = int(np.floor(-np.log2(domain.diameter)))
        finest = int(np.floor(-np.log2(finest_scale_cells * domain.h)))
        self.k_max = finest if k_max is None else min(int(k_max), finest)
        if self.k_max < self.k_min:
            raise ResolutionError(
                f"Resolution {domain.resolution} cannot resolve any dyadic generation"
            )

        self.cubes: List[DyadicCube] = []
        self.by_generation: Dict[int, List[int]] = {}
        self.labels = np.zeros((self.k_max - self.k_min + 1, self.n_points), dtype=np.int64)
        self._depth_by_level: Dict[int, np.ndarray] = {}
        self._corkscrews: Dict[int, Corkscrew] = {}

        nets = self._build_nets()
        self._build_cubes(nets)

        self.xi = max((max(c.length, c.outer) / c.radius for c in self.cubes), default=1.0)
        self.xi *= SANDWICH_SLACK
        logger.info(
            f"Dyadic grid on '{domain.name}': k in [{self.k_min}, {self.k_max}], "
            f"{len(self.cubes)} cubes, Xi={self.xi:.3f}, sandwich C={self.sandwich_constant():.3f}"
        )

    # ------------------------------------------------------------------ construction

    def _build_nets(self) -> List[List[int]]:
        """Greedy nested nets, scanning boundary points in index order."""
        nets: List[List[int]] = []
        current: List[int] = [0]
        for k in range(self.k_min, self.k_max + 1):
            separation = 2.0 ** (-k)
            keys = np.floor(self.points / separation).astype(np.int64)
            buckets: Dict[tuple, List[int]] = {}
            for p in current:
                buckets.setdefault(tuple(keys[p]), []).append(p)
            chosen = set(current)
            offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * self.domain.dim), indexing="ij"))
            offsets = offsets.reshape(self.domain.dim, -1).T
            for p in range(self.n_points):
                if p in chosen:
                    continue
                base = keys[p]
                near = False
                for offset in offsets:
                    for q in buckets.get(tuple(base + offset), ()):
                        if np.linalg.norm(self.points[p] - self.points[q]) < separation:
                            near = True
                            break
                    if near:
                        break
                if not near:
                    buckets.setdefault(tuple(base), []).append(p)
                    chosen.add(p)
                    current.append(p)
            nets.append(sorted(current))
            current = list(nets[-1])
        return nets

    def _nearest(self, centers: np.ndarray, queries: np.ndarray) -> np.ndarray:
        """Index into ``centers`` of the nearest centre, ties to the lowest index."""
        tree = cKDTree(self.points[centers])
        k = min(4, len(centers))
        dist, idx = tree.query(self.points[queries], k=k)
        dist = np.atleast_2d(dist.reshape(len(queries), -1))
        idx = np.atleast_2d(idx.reshape(len(queries), -1))
        tied = dist <= dist[:, :1] + TIE_TOLERANCE
        return np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)

    def _build_cubes(self, nets: List[List[int]]) -> None:
        top = self._make_cube(self.k_min, nets[0][0], np.arange(self.n_points), parent=-1)
        self.labels[0, :] = top.id
        frontier = [top]
        for level, net in enumerate(nets[1:], start=1):
            k = self.k_min + level
            in_net = np.zeros(self.n_points, dtype=bool)
            in_net[net] = True
            next_frontier: List[DyadicCube] = []
            for parent in frontier:
                centers = parent.members[in_net[parent.members]]
                owner = centers[self._nearest(centers, parent.members)]
                for center in centers:
                    child = self._make_cube(k, int(center), parent.members[owner == center],
                                            parent=parent.id)
                    parent.children.append(child.id)
                    self.labels[level, child.members] = child.id
                    next_frontier.append(child)
            frontier = next_frontier

        for level in range(self.labels.shape[0]):
            self._measure_depth(level)

    def _make_cube(self, k: int, net_point: int, members: np.ndarray, parent: int) -> DyadicCube:
        cube = DyadicCube(
            id=len(self.cubes), k=k, net_point=net_point, center_point=net_point,
            x=self.points[net_point].copy(), members=np.sort(members), parent=parent,
            children=[], inner=np.inf, outer=0.0, radius=2.0 ** (-k),
        )
        self.cubes.append(cube)
        self.by_generation.setdefault(k, []).append(cube.id)
        return cube

    def _measure_depth(self, level: int) -> None:
        """Distance from members to non-members; picks each cube's deepest point as centre."""
        k = self.k_min + level
        length = 2.0 ** (-k)
        cap = 2.0 * length
        labels = self.labels[level]
        depth = np.full(self.n_points, cap)
        for cube_id in self.by_generation[k]:
            cube = self.cubes[cube_id]
            members = cube.members
            spread = np.linalg.norm(self.points[members] - cube.x, axis=1).max()
            nearby = np.array(self.tree.query_ball_point(cube.x, spread + cap), dtype=np.int64)
            outside = nearby[labels[nearby] != cube_id] if nearby.size else nearby
            if outside.size:
                dist, _ = cKDTree(self.points[outside]).query(self.points[members])
                depth[members] = np.minimum(dist, cap)
            best = members[np.argmax(depth[members])]
            cube.center_point = int(best)
            cube.x = self.points[best].copy()
            cube.inner = float(depth[best]) if outside.size else np.inf
            cube.outer = float(np.linalg.norm(self.points[members] - cube.x, axis=1).max())
            cube.radius = min(length, max(cube.inner / 2.0, self.domain.h))
        self._depth_by_level[k] = depth

    # ------------------------------------------------------------------ queries

    def check_generation(self, k: int) -> None:
        """
        Raises:
            DyadicRangeError: If ``k`` is outside ``[k_min, k_max]``
        """
        if not self.k_min <= k <= self.k_max:
            raise DyadicRangeError(f"Generation {k} outside [{self.k_min}, {self.k_max}]")

    def cubes_at(self, k: int) -> List[DyadicCube]:
        """All cubes of generation ``k``."""
        self.check_generation(k)
        return [self.cubes[i] for i in self.by_generation[k]]

    def cube_of(self, point: int, k: int) -> DyadicCube:
        """Generation-``k`` cube containing boundary point ``point``."""
        self.check_generation(k)
        return self.cubes[int(self.labels[k - self.k_min, point])]

    def leaf_of(self, point: int) -> DyadicCube:
        return self.cube_of(point, self.k_max)

    def parent(self, cube: DyadicCube) -> Optional[DyadicCube]:
        return self.cubes[cube.parent] if cube.parent >= 0 else None

    def children(self, cube: DyadicCube) -> List[DyadicCube]:
        return [self.cubes[i] for i in cube.children]

    def descendants(self, cube: DyadicCube, max_depth: Optional[int] = None) -> List[DyadicCube]:
        """``D_Q``: the cube and all its descendants, breadth first."""
        found = [cube]
        layer = [cube]
        depth = 0
        while layer and (max_depth is None or depth < max_depth):
            layer = [child for c in layer for child in self.children(c)]
            found.extend(layer)
            depth += 1
        return found

    def is_descendant(self, cube: DyadicCube, ancestor: DyadicCube) -> bool:
        if cube.k < ancestor.k:
            return False
        return int(self.labels[ancestor.k - self.k_min, cube.center_point]) == ancestor.id

    def surface_ball(self, cube: DyadicCube, enlarged: bool = False) -> np.ndarray:
        """``Delta_Q`` or, with ``enlarged``, ``Delta(x_Q, Xi r_Q)``."""
        radius = cube.radius * (self.xi if enlarged else 1.0)
        return self.domain.surface_ball(cube.x, radius)

    def corkscrew(self, cube_id: int) -> Corkscrew:
        """Corkscrew point of ``Delta_Q`` (the radius kept below the boundary diameter)."""
        if cube_id not in self._corkscrews:
            cube = self.cubes[cube_id]
            radius = min(cube.radius, 0.999 * self.domain.diameter)
            self._corkscrews[cube_id] = self.domain.corkscrew(cube.x, radius)
        return self._corkscrews[cube_id]

    def cube_measure(self, weights: np.ndarray) -> np.ndarray:
        """Mass of every cube under point weights."""
        mass = np.zeros(len(self.cubes))
        for level in range(self.labels.shape[0]):
            mass += np.bincount(self.labels[level], weights=weights, minlength=len(self.cubes))
        return mass

    def ball_cubes(self, x: Sequence[float], r: float) -> List[DyadicCube]:
        """
        Cubes of generation ``k`` with ``2**(-k-1) < 200 r <= 2**-k`` meeting ``Delta(x, 2r)``.

        The generation is clamped to ``[k_min, k_max]``.
        """
        k = int(np.floor(-np.log2(200.0 * r)))
        k = min(max(k, self.k_min), self.k_max)
        hits = self.domain.surface_ball(x, 2.0 * r)
        if hits.size == 0:
            return []
        ids = np.unique(self.labels[k - self.k_min, hits])
        return [self.cubes[i] for i in ids]

    def sandwich_constant(self) -> float:
        """Smallest ``C`` with ``Delta(x_Q, l/C) in Q in Delta(x_Q, C l)`` over all cubes."""
        worst = 1.0
        for cube in self.cubes:
            if np.isfinite(cube.inner):
                worst = max(worst, cube.length / cube.inner)
            worst = max(worst, cube.outer / cube.length)
        return worst

    def thin_boundary_mass(self, cube_id: int, tau: float, mu: np.ndarray) -> float:
        """
        ``mu{y in Q: dist(y, E minus Q) <= tau l(Q)}`` for point weights ``mu``.

        Zero when ``Q`` is the whole boundary.

        Raises:
            ValueError: If ``tau`` is outside ``(0, THIN_TAU_LIMIT)``
        """
        if not 0.0 < tau < THIN_TAU_LIMIT:
            raise ValueError(f"tau must lie in (0, {THIN_TAU_LIMIT:g}), got {tau}")
        cube = self.cubes[cube_id]
        if not np.isfinite(cube.inner):
            return 0.0
        depth = self._depth_by_level[cube.k][cube.members]
        weights = np.asarray(mu, dtype=float)[cube.members]
        return float(weights[depth <= tau * cube.length].sum())

    def thin_boundary(self, taus: Sequence[float], mu: Optional[np.ndarray] = None) -> ThinBoundaryFit:
        """
        Fit ``mu{y in Q: dist(y, E minus Q) <= tau l(Q)} <= C tau**eta mu(Q)``.

        The same cubes enter every ``tau``: those below the top whose thinnest
        layer is at least one lattice spacing wide.
        """
        mu = self.weights if mu is None else np.asarray(mu, dtype=float)
        taus = sorted(float(t) for t in taus)
        if not taus:
            return ThinBoundaryFit(eta=float("nan"), constant=float("nan"), taus=[], mean_ratios=[])
        mass = self.cube_measure(mu)
        cubes = [
            cube for cube in self.cubes
            if cube.parent >= 0 and np.isfinite(cube.inner) and mass[cube.id] > 0
            and taus[0] * cube.length >= self.domain.h
        ]
        means: List[float] = []
        used: List[float] = []
        samples = []
        for tau in taus:
            ratios = [self.thin_boundary_mass(c.id, tau, mu) / mass[c.id] for c in cubes]
            if ratios and np.mean(ratios) > 0:
                used.append(tau)
                means.append(float(np.mean(ratios)))
                samples.append((tau, float(np.max(ratios))))
        if len(used) < 2:
            return ThinBoundaryFit(eta=float("nan"), constant=float("nan"), taus=used,
                                   mean_ratios=means)
        eta = float(np.polyfit(np.log(used), np.log(means), 1)[0])
        constant = max(ratio / tau ** eta for tau, ratio in samples)
        return ThinBoundaryFit(eta=eta, constant=float(constant), taus=used, mean_ratios=means)

    def max_children(self) -> int:
        """Largest number of children of one cube."""
        return max((len(c.children) for c in self.cubes), default=0)

    def summary(self) -> dict:
        return {
            "k_min": self.k_min,
            "k_max": self.k_max,
            "cubes": len(self.cubes),
            "xi": self.xi,
            "sandwich_constant": self.sandwich_constant(),
            "max_children": self.max_children(),
        }
