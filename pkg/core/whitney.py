"""
Whitney decomposition of the interior lattice.

Cubes are dyadic boxes in index space. A box is kept when every cell is
interior and ``ratio * diam(I) <= dist(I, boundary)``; otherwise it is split.
Single cells that still fail form the grid layer next to the boundary and are
reported separately from the true Whitney cubes.
"""

import logging
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from core.domain import GridDomain


logger = logging.getLogger(__name__)

MIN_FATTENING = 1.0 / 64.0


@dataclass
class WhitneyCube:
    """Axis-aligned dyadic box of lattice cells."""
    id: int
    corner: np.ndarray
    size: int
    side: float
    center: np.ndarray
    center_cell: int
    dist: float
    layer: bool
    cells: np.ndarray

    @property
    def diameter(self) -> float:
        return float(np.sqrt(len(self.corner)) * self.side)

    @property
    def generation(self) -> int:
        """``k_I`` with ``side = 2**-k_I``."""
        return int(np.rint(-np.log2(self.side)))


@dataclass
class WhitneyBounds:
    """Per-decomposition check of the Whitney size bounds."""
    min_inner_ratio: float
    max_outer_ratio: float
    touching_ratio: float
    overlap: int
    covered: bool
    layer_cells: int
    layer_fraction: float


class WhitneyDecomposition:
    """Whitney cubes covering the interior cells of a domain."""

    def __init__(self, domain: GridDomain, ratio: float = 8.0, fattening: float = 0.125):
        """
        Decompose the interior.

        Args:
            domain: Domain to decompose
            ratio: Selection rule ``ratio * diam(I) <= dist(I, boundary)``
            fattening: Initial ``lambda``, halved until the fattened separation holds
        """
        self.domain = domain
        self.ratio = ratio
        self.cubes: List[WhitneyCube] = []
        self.label = np.full(domain.interior.shape, -1, dtype=np.int64)
        self._fattened: Dict[Tuple[int, float], np.ndarray] = {}

        self._decompose()
        self.cube_of_cell = self.label[tuple(domain.cells.T)]
        self.pairs = self._touching_pairs()
        self.neighbors: List[Set[int]] = [set() for _ in self.cubes]
        for a, b in self.pairs:
            self.neighbors[a].add(b)
            self.neighbors[b].add(a)

        self.touching_ratio = self._touching_ratio()
        self.lam, self.tau = self._choose_fattening(fattening)
        logger.info(
            f"Whitney decomposition of '{domain.name}': {len(self.cubes)} cubes "
            f"({self.layer_count} layer), lambda={self.lam:g}, tau={self.tau:.3f}"
        )

    # ------------------------------------------------------------------ construction

    def _decompose(self) -> None:
        domain = self.domain
        top = 1
        while top * 2 <= domain.resolution - 1:
            top *= 2
        starts = [range(0, domain.resolution, top)] * domain.dim
        stack = [(np.array(corner), top) for corner in product(*starts)]
        stack.reverse()
        accepted: List[Tuple[np.ndarray, int, float, bool]] = []

        while stack:
            corner, size = stack.pop()
            block = self._block(corner, size)
            if block is None or not block.any():
                continue
            whole = block.all() and block.shape == (size,) * domain.dim
            if whole:
                if size > 1 and self._surely_too_close(corner, size):
                    stack.extend(self._split(corner, size))
                    continue
                dist = self._box_distance(corner, size)
                if self.ratio * np.sqrt(domain.dim) * size * domain.h <= dist:
                    accepted.append((corner, size, dist, False))
                    continue
                if size == 1:
                    accepted.append((corner, size, dist, True))
                    continue
            if size == 1:
                continue
            stack.extend(self._split(corner, size))

        accepted.sort(key=lambda item: tuple(item[0]))
        for corner, size, dist, layer in accepted:
            self._add_cube(corner, size, dist, layer)

    def _block(self, corner: np.ndarray, size: int) -> Optional[np.ndarray]:
        index = tuple(slice(c, min(c + size, self.domain.resolution)) for c in corner)
        if any(c >= self.domain.resolution for c in corner):
            return None
        return self.domain.interior[index]

    def _split(self, corner: np.ndarray, size: int) -> List[Tuple[np.ndarray, int]]:
        half = size // 2
        children = [(corner + half * np.array(offset), half)
                    for offset in product((0, 1), repeat=self.domain.dim)]
        return list(reversed(children))

    def _box_frame(self, corner: np.ndarray, size: int):
        h = self.domain.h
        low = (corner - 0.5) * h
        high = (corner + size - 0.5) * h
        half_diag = 0.5 * np.sqrt(self.domain.dim) * size * h
        return low, high, 0.5 * (low + high), half_diag

    def _surely_too_close(self, corner: np.ndarray, size: int) -> bool:
        """The centre distance already bounds ``dist(I)`` below the selection threshold."""
        _, _, center, half_diag = self._box_frame(corner, size)
        reach, _ = self.domain.boundary_tree.query(center)
        return reach < self.ratio * 2.0 * half_diag

    def _box_distance(self, corner: np.ndarray, size: int) -> float:
        """Exact distance from the closed box of cells to the boundary points."""
        low, high, center, half_diag = self._box_frame(corner, size)
        reach, _ = self.domain.boundary_tree.query(center)
        hits = self.domain.boundary_tree.query_ball_point(center, reach + half_diag + 1e-12)
        points = self.domain.boundary_points[hits]
        gap = np.maximum(np.maximum(low - points, points - high), 0.0)
        return float(np.linalg.norm(gap, axis=1).min())

    def _add_cube(self, corner: np.ndarray, size: int, dist: float, layer: bool) -> None:
        domain = self.domain
        index = tuple(slice(c, c + size) for c in corner)
        cells = np.sort(domain.cell_index[index].ravel())
        center = (corner + (size - 1) / 2.0) * domain.h
        nearest = cells[np.argmin(np.linalg.norm(domain.centers[cells] - center, axis=1))]
        cube = WhitneyCube(
            id=len(self.cubes), corner=corner.astype(np.int64), size=size,
            side=size * domain.h, center=center, center_cell=int(nearest),
            dist=dist, layer=layer, cells=cells,
        )
        self.label[index] = cube.id
        self.cubes.append(cube)

    def _touching_pairs(self) -> List[Tuple[int, int]]:
        """Pairs of distinct cubes whose closed boxes meet."""
        label = self.label
        found: Set[Tuple[int, int]] = set()
        for offset in product((-1, 0, 1), repeat=self.domain.dim):
            if not any(offset):
                continue
            source = tuple(slice(max(0, -o), label.shape[i] - max(0, o))
                           for i, o in enumerate(offset))
            target = tuple(slice(max(0, o), label.shape[i] - max(0, -o))
                           for i, o in enumerate(offset))
            a = label[source].ravel()
            b = label[target].ravel()
            keep = (a >= 0) & (b >= 0) & (a < b)
            found.update(zip(a[keep].tolist(), b[keep].tolist()))
        return sorted(found)

    def _touching_ratio(self) -> float:
        if not self.pairs:
            return 1.0
        sizes = np.array([c.size for c in self.cubes], dtype=float)
        pairs = np.array(self.pairs)
        a, b = sizes[pairs[:, 0]], sizes[pairs[:, 1]]
        return float(np.max(np.maximum(a / b, b / a)))

    def _choose_fattening(self, lam: float) -> Tuple[float, float]:
        """Halve ``lambda`` until ``tau J`` misses ``(1 + lambda) I`` for all ``I != J``."""
        while True:
            tau = 0.5 * (0.5 + 1.0 - lam * self.touching_ratio)
            if tau > 0.5 and self._separated(lam, tau):
                return lam, tau
            if lam <= MIN_FATTENING:
                logger.warning(f"Fattening separation not reached, keeping lambda={lam:g}")
                return lam, max(tau, 0.5)
            lam /= 2.0

    def _separated(self, lam: float, tau: float) -> bool:
        """Every ``J`` meeting ``(1 + lambda) I`` owns a cell in the widened index box of ``I``."""
        centers = np.array([c.center for c in self.cubes])
        sides = np.array([c.side for c in self.cubes])
        n = self.domain.resolution
        for cube in self.cubes:
            margin = int(np.ceil(0.5 * lam * cube.size)) + 1
            index = tuple(slice(max(c - margin, 0), min(c + cube.size + margin, n))
                          for c in cube.corner)
            others = np.unique(self.label[index])
            others = others[(others >= 0) & (others != cube.id)]
            if others.size == 0:
                continue
            gap = np.abs(centers[others] - cube.center)
            reach = 0.5 * ((1 + lam) * cube.side + tau * sides[others])
            if np.any(np.all(gap < reach[:, None] - 1e-12, axis=1)):
                return False
        return True

    # ------------------------------------------------------------------ queries

    @property
    def layer_count(self) -> int:
        return sum(1 for c in self.cubes if c.layer)

    def fattened_cells(self, cube_id: int, factor: float = 1.0) -> np.ndarray:
        """
        Interior cells whose centres lie in the closed box ``(1 + factor * lambda) I``.

        ``factor`` 1, 2 and 4 give ``I*``, ``I**`` and ``I***``.
        """
        key = (cube_id, factor)
        if key not in self._fattened:
            cube = self.cubes[cube_id]
            h = self.domain.h
            half = 0.5 * (1.0 + factor * self.lam) * cube.side
            low = np.ceil((cube.center - half) / h - 1e-9).astype(int)
            high = np.floor((cube.center + half) / h + 1e-9).astype(int)
            low = np.clip(low, 0, self.domain.resolution - 1)
            high = np.clip(high, 0, self.domain.resolution - 1)
            index = tuple(slice(lo, hi + 1) for lo, hi in zip(low, high))
            ids = self.domain.cell_index[index].ravel()
            self._fattened[key] = np.sort(ids[ids >= 0])
        return self._fattened[key]

    def union_cells(self, cube_ids, factor: float = 1.0) -> np.ndarray:
        """Sorted cells of the union of fattened cubes."""
        parts = [self.fattened_cells(i, factor) for i in cube_ids]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def overlap_count(self, factor: float = 1.0) -> int:
        """Largest number of closed fattened boxes through one point of the half-cell lattice."""
        h = self.domain.h
        fine = 2 * self.domain.resolution + 1
        counts = np.zeros((fine,) * self.domain.dim, dtype=np.int64)
        for cube in self.cubes:
            half = 0.5 * (1.0 + factor * self.lam) * cube.side
            # half-cell lattice point j sits at (j - 1) * h / 2
            low = np.ceil(2 * (cube.center - half) / h - 1e-9).astype(int) + 1
            high = np.floor(2 * (cube.center + half) / h + 1e-9).astype(int) + 1
            low = np.clip(low, 0, fine - 1)
            high = np.clip(high, 0, fine - 1)
            counts[tuple(slice(lo, hi + 1) for lo, hi in zip(low, high))] += 1
        return int(counts.max())

    def bounds(self) -> WhitneyBounds:
        """
        Size bounds over the true Whitney cubes, cover check over all cells.

        Layer cells (single cells closer to the boundary than the selection rule
        allows) are left out of the size ratios and counted in ``layer_fraction``.
        """
        inner, outer = np.inf, 0.0
        for cube in self.cubes:
            if cube.layer:
                continue
            # dist(4I) >= dist(I) - 1.5 side * sqrt(d)
            four = cube.dist - 1.5 * cube.diameter
            inner = min(inner, four / cube.diameter)
            outer = max(outer, cube.dist / cube.diameter)
        covered = bool(np.all(self.cube_of_cell >= 0)) and sum(
            c.cells.size for c in self.cubes) == self.domain.n_cells
        return WhitneyBounds(
            min_inner_ratio=float(inner), max_outer_ratio=float(outer),
            touching_ratio=self.touching_ratio, overlap=self.overlap_count(),
            covered=covered, layer_cells=self.layer_count,
            layer_fraction=self.layer_count / max(self.domain.n_cells, 1),
        )

    def cube_containing(self, cell: int) -> WhitneyCube:
        return self.cubes[int(self.cube_of_cell[cell])]

    def summary(self) -> dict:
        b = self.bounds()
        return {
            "cubes": len(self.cubes),
            "layer_cubes": b.layer_cells,
            "layer_fraction": b.layer_fraction,
            "lambda": self.lam,
            "tau": self.tau,
            "min_dist4_over_diam": b.min_inner_ratio,
            "max_dist_over_diam": b.max_outer_ratio,
            "touching_ratio": b.touching_ratio,
            "overlap": b.overlap,
        }
