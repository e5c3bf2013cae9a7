"""
Whitney regions, Carleson boxes and sawtooth regions.

Every Whitney cube gets a home dyadic cube: the cube of generation
``round(log2(1/dist))`` (clamped to the lattice) containing the boundary point
nearest its centre. ``U_Q`` joins the home cubes of ``Q`` to the cube holding
the corkscrew ``X_Q`` through Whitney cubes of compatible scale close to ``Q``.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from core.capacity import cdc_profile
from core.domain import GridDomain
from core.dyadic_grid import DyadicCube, DyadicGrid
from core.error_handler import DyadicError, DyadicRangeError, WhitneyTuningError
from core.whitney import WhitneyDecomposition


logger = logging.getLogger(__name__)

# (k*, K0) pairs tried in order until every cube connects
TUNING_SCHEDULE = [(1, 2), (1, 4), (2, 4), (2, 8), (3, 8), (3, 16), (4, 16)]
MIN_CUTOFF_DEPTH = 4


@dataclass
class RegionTuning:
    k_star: int
    window: float
    failures: List[int] = field(default_factory=list)


@dataclass
class SawtoothRegion:
    """Cell set of ``U_Q``, ``T_Q``, ``T_Delta`` or ``Omega_{F,Q0}``."""
    cells: np.ndarray
    whitney: np.ndarray
    cubes: List[int]
    starred_cells: np.ndarray

    @property
    def empty(self) -> bool:
        return self.cells.size == 0


@dataclass
class CutoffPsi:
    """Smoothed indicator of the truncated sawtooth ``Omega_N``."""
    N: int
    values: np.ndarray
    gradient: np.ndarray
    members: np.ndarray
    frontier: np.ndarray
    associated: Dict[int, int]
    lower_constant: float
    gradient_constant: float
    structural_bound: float
    flat_gradient: float
    support_violation: float
    associated_overlap: int


@dataclass
class CommonCorkscrew:
    point: np.ndarray
    cell: int
    clearance: float
    sawtooth_clearance: float

    @property
    def ratio(self) -> float:
        """``delta / delta_sawtooth`` at the point (at least 1)."""
        return self.clearance / self.sawtooth_clearance


@dataclass
class ProjectionPatch:
    """Face patch ``P_j`` on the interior boundary of a sawtooth."""
    cube: int
    whitney: int
    faces: np.ndarray
    size: float
    dist_to_cube: float
    dist_to_boundary: float


class WhitneyRegions:
    """``U_Q`` for every dyadic cube, with the derived boxes and sawtooths."""

    def __init__(self, grid: DyadicGrid, whitney: WhitneyDecomposition, tuning_limit: int = 7,
                 strict: bool = False):
        """
        Raises:
            ValueError: If ``tuning_limit`` allows no tuning step
            WhitneyTuningError: With ``strict``, if some cube stays unconnected
        """
        if tuning_limit < 1:
            raise ValueError(f"tuning_limit must be at least 1, got {tuning_limit}")
        self.grid = grid
        self.whitney = whitney
        self.domain = grid.domain
        self.generation = self._distance_generations()
        self.home = self._homes()
        self.homes_of: Dict[int, List[int]] = {}
        for wid, qid in enumerate(self.home):
            self.homes_of.setdefault(int(qid), []).append(wid)
        self.anchor = {
            cube.id: int(whitney.cube_of_cell[grid.corkscrew(cube.id).cell]) for cube in grid.cubes
        }
        self._trees: Dict[int, cKDTree] = {}
        self._cells: Dict[Tuple[int, float], np.ndarray] = {}
        self._boxes: Dict[int, np.ndarray] = {}
        self._domains: Dict[bytes, GridDomain] = {}
        self.members: Dict[int, np.ndarray] = {}
        self.tuning = self._tune(TUNING_SCHEDULE[:tuning_limit])
        if strict and self.tuning.failures:
            raise WhitneyTuningError(
                f"{len(self.tuning.failures)} cubes stay unconnected after {tuning_limit} tuning steps "
                f"(k*={self.tuning.k_star}, K0={self.tuning.window:g})"
            )

    # ------------------------------------------------------------------ construction

    def _distance_generations(self) -> np.ndarray:
        dist = np.array([c.dist for c in self.whitney.cubes])
        with np.errstate(divide="ignore"):
            scale = np.where(dist > 0, np.rint(np.log2(1.0 / np.maximum(dist, 1e-300))), np.inf)
        return np.clip(scale, self.grid.k_min, self.grid.k_max).astype(np.int64)

    def _homes(self) -> np.ndarray:
        centers = np.array([c.center for c in self.whitney.cubes])
        nearest = self.domain.nearest_boundary(centers)
        rows = self.generation - self.grid.k_min
        return self.grid.labels[rows, nearest]

    def _tree(self, cube: DyadicCube) -> cKDTree:
        if cube.id not in self._trees:
            self._trees[cube.id] = cKDTree(self.grid.points[cube.members])
        return self._trees[cube.id]

    def _connect(self, cube: DyadicCube, k_star: int, window: float) -> Tuple[np.ndarray, bool]:
        """Whitney cubes on shortest touching paths from the corkscrew cube to the home cubes."""
        anchor = self.anchor[cube.id]
        targets = set(self.homes_of.get(cube.id, [])) | {anchor}
        nearby = np.flatnonzero(np.abs(self.generation - cube.k) <= k_star)
        if nearby.size:
            centers = np.array([self.whitney.cubes[i].center for i in nearby])
            half = np.array([0.5 * self.whitney.cubes[i].diameter for i in nearby])
            reach, _ = self._tree(cube).query(centers)
            nearby = nearby[np.maximum(reach - half, 0.0) <= window * cube.length]
        allowed = set(nearby.tolist()) | targets

        parent = {anchor: -1}
        queue = deque([anchor])
        while queue:
            current = queue.popleft()
            for nxt in sorted(self.whitney.neighbors[current]):
                if nxt in allowed and nxt not in parent:
                    parent[nxt] = current
                    queue.append(nxt)

        chosen = set()
        complete = True
        for target in sorted(targets):
            if target not in parent:
                complete = False
                continue
            node = target
            while node != -1 and node not in chosen:
                chosen.add(node)
                node = parent[node]
        return np.array(sorted(chosen), dtype=np.int64), complete

    def _tune(self, schedule: Sequence[Tuple[int, int]]) -> RegionTuning:
        """Smallest ``(k*, K0)`` joining every cube to its corkscrew, then frozen."""
        failures: List[int] = []
        for k_star, window in schedule:
            members: Dict[int, np.ndarray] = {}
            failures = []
            for cube in self.grid.cubes:
                members[cube.id], complete = self._connect(cube, k_star, window)
                if not complete:
                    failures.append(cube.id)
            self.members = members
            if not failures:
                logger.info(f"Whitney regions tuned: k*={k_star}, K0={window}")
                return RegionTuning(k_star=k_star, window=float(window))
            logger.debug(f"Tuning k*={k_star}, K0={window}: {len(failures)} cubes unconnected")
        logger.warning(
            f"Whitney region tuning failed for {len(failures)} cubes with k*={k_star}, K0={window}"
        )
        return RegionTuning(k_star=k_star, window=float(window), failures=failures)

    # ------------------------------------------------------------------ regions

    def region(self, cube: DyadicCube, factor: float = 1.0) -> np.ndarray:
        """Cells of ``U_Q`` (``factor`` 2 gives ``U_Q**``)."""
        key = (cube.id, factor)
        if key not in self._cells:
            self._cells[key] = self.whitney.union_cells(self.members[cube.id], factor)
        return self._cells[key]

    def overlap_count(self) -> int:
        """Largest number of regions ``U_Q`` through one interior cell."""
        counts = np.zeros(self.domain.n_cells, dtype=np.int64)
        for cube in self.grid.cubes:
            counts[self.region(cube)] += 1
        return int(counts.max())

    def _family_region(self, cubes: Iterable[DyadicCube]) -> SawtoothRegion:
        ids = [c.id for c in cubes]
        whitney_ids = np.unique(np.concatenate(
            [self.members[i] for i in ids] or [np.zeros(0, dtype=np.int64)]))
        return SawtoothRegion(
            cells=self.whitney.union_cells(whitney_ids, 1.0),
            whitney=whitney_ids,
            cubes=ids,
            starred_cells=self.whitney.union_cells(whitney_ids, 2.0),
        )

    def carleson_box(self, cube: DyadicCube) -> SawtoothRegion:
        """``T_Q``: union of ``U_Q'`` over all descendants."""
        return self._family_region(self.grid.descendants(cube))

    def carleson_box_ball(self, x: Sequence[float], r: float) -> SawtoothRegion:
        """``T_Delta``: union of ``T_Q`` over the cubes at scale ``200 r`` meeting ``Delta(x, 2r)``."""
        family = [d for q in self.grid.ball_cubes(x, r) for d in self.grid.descendants(q)]
        return self._family_region(family)

    def box_sandwich(self, cube: DyadicCube) -> Tuple[float, float]:
        """``(kappa0, kappa1)`` with ``kappa1 B_Q in T_Q in kappa0 B_Q`` (intersected with the domain)."""
        cells = self.carleson_box(cube).cells
        offsets = np.linalg.norm(self.domain.centers - cube.x, axis=1) / cube.radius
        inside = np.zeros(self.domain.n_cells, dtype=bool)
        inside[cells] = True
        kappa0 = float(offsets[inside].max()) if inside.any() else 0.0
        kappa1 = float(offsets[~inside].min()) if (~inside).any() else np.inf
        return kappa0, kappa1

    def sandwich_constants(self) -> Tuple[float, float]:
        """Uniform ``(kappa0, kappa1)`` over all cubes."""
        pairs = [self.box_sandwich(c) for c in self.grid.cubes]
        return max(p[0] for p in pairs), min(p[1] for p in pairs)

    def family_cubes(self, family: Sequence[DyadicCube], top: DyadicCube) -> List[DyadicCube]:
        """
        ``D_{F,Q0}``: descendants of ``top`` not contained in any member of ``family``.

        Raises:
            DyadicError: If the family is not a pairwise disjoint subfamily of ``D_{Q0}``
        """
        for i, a in enumerate(family):
            if not self.grid.is_descendant(a, top):
                raise DyadicError(f"Cube {a.id} is not inside cube {top.id}")
            for b in family[i + 1:]:
                if self.grid.is_descendant(a, b) or self.grid.is_descendant(b, a):
                    raise DyadicError(f"Cubes {a.id} and {b.id} overlap")
        return [q for q in self.grid.descendants(top)
                if not any(self.grid.is_descendant(q, f) for f in family)]

    def sawtooth(self, family: Sequence[DyadicCube], top: DyadicCube) -> SawtoothRegion:
        """``Omega_{F,Q0}``; an empty family gives ``T_{Q0}``."""
        region = self._family_region(self.family_cubes(family, top))
        if region.empty:
            logger.warning(f"Sawtooth over cube {top.id} is empty")
        return region

    def depth_family(self, top: DyadicCube, depth: int) -> List[DyadicCube]:
        """All descendants of ``top`` exactly ``depth`` generations below it."""
        target = top.k + depth
        return [q for q in self.grid.descendants(top, max_depth=depth) if q.k == target]

    def region_domain(self, region: SawtoothRegion) -> GridDomain:
        """The region as a stand-alone domain on the same lattice."""
        key = region.cells.tobytes()
        if key not in self._domains:
            self._domains[key] = GridDomain.from_mask(
                self.domain.submask(region.cells), name=f"{self.domain.name}-sawtooth",
                require_connected=False,
            )
        return self._domains[key]

    def sawtooth_cdc(self, region: SawtoothRegion, samples: int = 8) -> float:
        """Smallest sampled capacity density ratio on the region's boundary."""
        saw = self.region_domain(region)
        h = self.domain.h
        profile = cdc_profile(saw, saw.boundary_points, [2 * h, 4 * h], limit=samples)
        return profile.ratio

    # ------------------------------------------------------------------ cutoff

    def cutoff_psi(self, top: DyadicCube, N: int) -> CutoffPsi:
        """
        Partition-of-unity cutoff of ``Omega_N`` built from the first ``N`` generations below ``top``.

        Raises:
            ValueError: If ``N < 4``
            DyadicRangeError: If ``k(Q0) + N`` exceeds the finest generation
        """
        if N < MIN_CUTOFF_DEPTH:
            raise ValueError(f"Cutoff depth N must be at least {MIN_CUTOFF_DEPTH}, got {N}")
        if top.k + N > self.grid.k_max:
            raise DyadicRangeError(f"k(Q0) + N = {top.k + N} exceeds k_max = {self.grid.k_max}")
        whitney = self.whitney
        domain = self.domain
        h, lam = domain.h, whitney.lam
        cubes = self.grid.descendants(top, max_depth=N - 1)
        members = np.unique(np.concatenate([self.members[q.id] for q in cubes]))
        in_members = np.zeros(len(whitney.cubes), dtype=bool)
        in_members[members] = True
        frontier = np.array(
            [i for i in members if any(not in_members[j] for j in whitney.neighbors[i])],
            dtype=np.int64,
        )

        t_in, t_out = 0.5 * (1 + lam), 0.5 * (1 + 1.5 * lam)
        total = np.zeros(domain.n_cells)
        part = np.zeros(domain.n_cells)
        grad_total = np.zeros((domain.n_cells, domain.dim))
        grad_part = np.zeros((domain.n_cells, domain.dim))
        depth_ratio = 0.0
        for cube in whitney.cubes:
            low = np.ceil((cube.center - t_out * cube.side) / h - 1e-9).astype(int)
            high = np.floor((cube.center + t_out * cube.side) / h + 1e-9).astype(int)
            low = np.clip(low, 0, domain.resolution - 1)
            high = np.clip(high, 0, domain.resolution - 1)
            ids = domain.cell_index[tuple(slice(a, b + 1) for a, b in zip(low, high))].ravel()
            ids = ids[ids >= 0]
            scaled = (domain.centers[ids] - cube.center) / cube.side
            axis = np.argmax(np.abs(scaled), axis=1)
            reach = np.abs(scaled[np.arange(ids.size), axis])
            bump = np.clip((t_out - reach) / (t_out - t_in), 0.0, 1.0)
            ramp = (reach > t_in) & (reach < t_out)
            slope = np.zeros((ids.size, domain.dim))
            slope[np.arange(ids.size), axis] = np.where(
                ramp, -np.sign(scaled[np.arange(ids.size), axis]) / ((t_out - t_in) * cube.side),
                0.0,
            )
            if np.any(bump > 0):
                depth_ratio = max(depth_ratio, float(domain.delta[ids[bump > 0]].max() / cube.side))
            total[ids] += bump
            grad_total[ids] += slope
            if in_members[cube.id]:
                part[ids] += bump
                grad_part[ids] += slope

        values = part / total
        gradient = (grad_part * total[:, None] - part[:, None] * grad_total) / (total ** 2)[:, None]

        omega_n = whitney.union_cells(members, 1.0)
        omega_n_star = whitney.union_cells(members, 2.0)
        outside = np.ones(domain.n_cells, dtype=bool)
        outside[omega_n_star] = False
        interior_members = np.setdiff1d(members, frontier)
        flat_cells = whitney.union_cells(interior_members, 2.0)

        associated = {int(i): int(self.home[i]) for i in frontier}
        coverage = np.zeros(domain.n_boundary, dtype=np.int64)
        for qid in associated.values():
            coverage[self.grid.cubes[qid].members] += 1

        magnitude = np.linalg.norm(gradient, axis=1)
        overlap = whitney.overlap_count(1.5)
        psi = CutoffPsi(
            N=N, values=values, gradient=gradient, members=members, frontier=frontier,
            associated=associated,
            lower_constant=float(1.0 / values[omega_n].min()) if omega_n.size else np.inf,
            gradient_constant=float((magnitude * domain.delta).max()),
            structural_bound=float(2.0 * overlap * depth_ratio / (t_out - t_in)),
            flat_gradient=float(magnitude[flat_cells].max()) if flat_cells.size else 0.0,
            support_violation=float(np.abs(values[outside]).max()) if outside.any() else 0.0,
            associated_overlap=int(coverage.max()),
        )
        logger.info(
            f"Cutoff N={N} over cube {top.id}: C={psi.lower_constant:.3f}, "
            f"sup|grad|delta={psi.gradient_constant:.3f}"
        )
        return psi

    # ------------------------------------------------------------------ corkscrew and patches

    def _saw_cells(self, saw: GridDomain, cells: np.ndarray) -> np.ndarray:
        return saw.cell_index[tuple(self.domain.cells[cells].T)]

    def common_corkscrew(self, family: Sequence[DyadicCube], top: DyadicCube) -> CommonCorkscrew:
        """
        Centre of the member Whitney cube with the most clearance from both boundaries.

        Raises:
            DyadicError: If the sawtooth is empty
        """
        region = self.sawtooth(family, top)
        if region.empty:
            raise DyadicError(f"Sawtooth over cube {top.id} is empty")
        saw = self.region_domain(region)
        cells = np.array([self.whitney.cubes[i].center_cell for i in region.whitney])
        own = self._saw_cells(saw, cells)
        score = np.minimum(self.domain.delta[cells], saw.delta[own])
        best = int(np.argmax(score))
        cell = int(cells[best])
        return CommonCorkscrew(
            point=self.domain.centers[cell].copy(), cell=cell,
            clearance=float(self.domain.delta[cell]), sawtooth_clearance=float(saw.delta[own[best]]),
        )

    def inner_faces(self, saw: GridDomain) -> np.ndarray:
        """Boundary faces of a region that separate it from other interior cells."""
        steps = np.zeros((saw.n_boundary, saw.dim), dtype=np.int64)
        steps[np.arange(saw.n_boundary), saw.face_axis] = 2 * saw.face_side - 1
        outer = saw.cells[saw.face_owner] + steps
        return np.flatnonzero(self.domain.interior[tuple(outer.T)])

    def projection_patches(self, family: Sequence[DyadicCube],
                           top: DyadicCube) -> Tuple[List[ProjectionPatch], int]:
        """
        Patches ``P_j`` for each member of ``family`` and their overlap count.

        Members without a qualifying Whitney cube are skipped with a warning.
        """
        region = self.sawtooth(family, top)
        if region.empty:
            return [], 0
        saw = self.region_domain(region)
        inner = self.inner_faces(saw)
        to_domain = self.domain.cell_index[tuple(saw.cells.T)]
        inner_owner = to_domain[saw.face_owner[inner]]

        patches: List[ProjectionPatch] = []
        coverage = np.zeros(saw.n_boundary, dtype=np.int64)
        for cube in family:
            length = cube.length
            best: Optional[Tuple[float, int, np.ndarray]] = None
            for wid in region.whitney:
                w = self.whitney.cubes[wid]
                if not length / 4.0 <= w.dist <= 4.0 * length:
                    continue
                fat = self.whitney.fattened_cells(wid, 1.0)
                faces = inner[np.isin(inner_owner, fat)]
                if faces.size == 0:
                    continue
                gap, _ = self._tree(cube).query(w.center)
                if best is None or gap < best[0]:
                    best = (float(gap), int(wid), faces)
            if best is None:
                logger.warning(f"No projection patch for cube {cube.id} (side {length:g})")
                continue
            _, wid, faces = best
            points = saw.boundary_points[faces]
            size = float(pdist(points).max()) if len(points) > 1 else self.domain.h
            gap, _ = self._tree(cube).query(points)
            patches.append(ProjectionPatch(
                cube=cube.id, whitney=wid, faces=faces, size=size,
                dist_to_cube=float(np.min(gap)),
                dist_to_boundary=float(self.domain.distance(points).min()),
            ))
            coverage[faces] += 1
        return patches, int(coverage.max()) if patches else 0

    def summary(self) -> dict:
        kappa0, kappa1 = self.sandwich_constants()
        return {
            "k_star": self.tuning.k_star,
            "window": self.tuning.window,
            "tuning_failures": len(self.tuning.failures),
            "kappa0": kappa0,
            "kappa1": kappa1,
            "region_overlap": self.overlap_count(),
        }
