"""
Voxelized domains on the unit box.

A domain is a boolean mask over a uniform lattice of cell centres
``i * h`` (``h = 1 / (resolution - 1)``). Boundary points are the centres of
faces shared by an interior and an exterior cell; each carries surface weight
``h**(d-1)``. Distances to the boundary are exact nearest-face distances.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from core.error_handler import (
    DegenerateBallError,
    DisconnectedDomainError,
    GeometryError,
    ResolutionError,
    UnreachablePointError,
)


logger = logging.getLogger(__name__)

# ratio of a chain ball radius to the distance of its centre from the boundary
CHAIN_BALL_RATIO = 0.6
DIAMETER_SAMPLE = 4096
# one interior cell inside the exterior frame
MIN_RESOLUTION = 3


@dataclass
class Corkscrew:
    """Interior point well inside a surface ball."""
    point: np.ndarray
    cell: int
    clearance: float
    radius: float

    @property
    def constant(self) -> float:
        """Corkscrew constant achieved for this ball."""
        return self.clearance / self.radius


@dataclass
class HarnackChain:
    """Chain of interior balls joining two points."""
    centers: np.ndarray
    radii: np.ndarray
    clearances: np.ndarray
    cells: List[int]
    separation: float
    gaps: int = 0

    @property
    def count(self) -> int:
        return len(self.cells)

    @property
    def count_ratio(self) -> float:
        """Ball count over ``2 + log2+(separation)``."""
        return self.count / (2.0 + max(0.0, float(np.log2(max(self.separation, 1.0)))))

    @property
    def size_constant(self) -> float:
        """Worst ratio between ball diameter and the ball's distance to the boundary."""
        diam = 2.0 * self.radii
        dist = self.clearances - self.radii
        return float(np.max(np.maximum(diam / dist, dist / diam)))


@dataclass
class KochPolygon:
    """Outline of a Koch-type island, vertices in lattice half-cell units."""
    vertices: np.ndarray
    side: float
    depth: int
    perimeter: float = field(init=False)

    def __post_init__(self):
        edges = np.diff(np.vstack([self.vertices, self.vertices[:1]]), axis=0)
        self.perimeter = float(np.abs(edges).sum())


class GridDomain:
    """Bounded open set represented on a uniform lattice."""

    def __init__(self, interior: np.ndarray, name: str = "mask", require_connected: bool = True):
        """
        Build a domain from an interior mask.

        Args:
            interior: Boolean array of shape ``(resolution,) * dim``
            name: Label used in reports
            require_connected: Raise if the interior is not face-connected

        Raises:
            GeometryError: If the mask is empty or malformed
            DisconnectedDomainError: If the interior is disconnected
        """
        mask = np.array(interior, dtype=bool, copy=True)
        if mask.ndim not in (2, 3) or len(set(mask.shape)) != 1:
            raise GeometryError(f"Domain mask must be a 2D or 3D cube array, got shape {mask.shape}")
        if mask.shape[0] < MIN_RESOLUTION:
            raise ResolutionError(f"Resolution {mask.shape[0]} is too coarse")

        # the outer layer of the box is always exterior
        for axis in range(mask.ndim):
            index = [slice(None)] * mask.ndim
            index[axis] = 0
            mask[tuple(index)] = False
            index[axis] = -1
            mask[tuple(index)] = False

        if not mask.any():
            raise GeometryError(f"Domain '{name}' has no interior cells")

        self.name = name
        self.dim = mask.ndim
        self.resolution = mask.shape[0]
        self.h = 1.0 / (self.resolution - 1)
        self.interior = mask
        self.polygon: Optional[KochPolygon] = None

        if require_connected:
            _, components = ndimage.label(mask)
            if components != 1:
                raise DisconnectedDomainError(
                    f"Domain '{name}' has {components} connected components"
                )

        self.cell_index = np.full(mask.shape, -1, dtype=np.int64)
        flat = np.flatnonzero(mask.ravel())
        self.cell_index.ravel()[flat] = np.arange(flat.size)
        self.cells = np.column_stack(np.unravel_index(flat, mask.shape)).astype(np.int64)
        self.centers = self.cells * self.h
        self.n_cells = flat.size

        self._build_neighbors()
        self._build_boundary()

        self.boundary_tree = cKDTree(self.boundary_points)
        self.delta, nearest = self.boundary_tree.query(self.centers)
        self.nearest_face = nearest.astype(np.int64)
        self.diameter = self._boundary_diameter()

        logger.info(
            f"Domain '{name}': dim={self.dim} res={self.resolution} cells={self.n_cells} "
            f"boundary={self.n_boundary} diam={self.diameter:.4f}"
        )

    # ------------------------------------------------------------------ construction

    def _build_neighbors(self) -> None:
        """Face neighbours per cell: ``neighbors[c, axis, side]`` (side 0 = minus)."""
        self.neighbors = np.full((self.n_cells, self.dim, 2), -1, dtype=np.int64)
        for axis in range(self.dim):
            for side, step in enumerate((-1, 1)):
                shifted = self.cells.copy()
                shifted[:, axis] += step
                self.neighbors[:, axis, side] = self.cell_index[tuple(shifted.T)]

    def _build_boundary(self) -> None:
        owners, axes, sides = [], [], []
        for axis in range(self.dim):
            for side in range(2):
                owner = np.flatnonzero(self.neighbors[:, axis, side] < 0)
                owners.append(owner)
                axes.append(np.full(owner.size, axis, dtype=np.int64))
                sides.append(np.full(owner.size, side, dtype=np.int64))
        owner = np.concatenate(owners)
        axis = np.concatenate(axes)
        side = np.concatenate(sides)
        order = np.lexsort((side, axis, owner))
        self.face_owner = owner[order]
        self.face_axis = axis[order]
        self.face_side = side[order]

        offsets = np.zeros((self.face_owner.size, self.dim))
        offsets[np.arange(self.face_owner.size), self.face_axis] = (
            (2 * self.face_side - 1) * 0.5 * self.h
        )
        self.boundary_points = self.centers[self.face_owner] + offsets
        self.n_boundary = self.face_owner.size
        self.surface_weight = self.h ** (self.dim - 1)
        self.sigma = np.full(self.n_boundary, self.surface_weight)

    def _boundary_diameter(self) -> float:
        points = self.boundary_points
        if len(points) > DIAMETER_SAMPLE:
            points = points[:: int(np.ceil(len(points) / DIAMETER_SAMPLE))]
        return float(pdist(points).max()) if len(points) > 1 else self.h

    @classmethod
    def from_mask(cls, mask: np.ndarray, name: str = "mask",
                  require_connected: bool = True) -> "GridDomain":
        """Domain whose interior is ``mask``."""
        return cls(mask, name=name, require_connected=require_connected)

    @classmethod
    def square(cls, resolution: int, dim: int = 2) -> "GridDomain":
        """Open unit square (``dim=2``) or cube (``dim=3``)."""
        mask = np.ones((resolution,) * dim, dtype=bool)
        return cls(mask, name="square" if dim == 2 else "cube")

    @classmethod
    def disk(cls, resolution: int, radius: float = 0.45, dim: int = 2) -> "GridDomain":
        """Disk (or ball) of the given radius centred in the box."""
        if not 0.0 < radius < 0.5:
            raise GeometryError(f"Disk radius must lie in (0, 0.5), got {radius}")
        coords = _lattice_coordinates(resolution, dim)
        mask = sum((c - 0.5) ** 2 for c in coords) < radius ** 2
        return cls(mask, name="disk" if dim == 2 else "ball")

    @classmethod
    def lipschitz(cls, resolution: int, slope: float = 1.0) -> "GridDomain":
        """Region above a sawtooth graph of the given slope, below ``y = 0.9``."""
        if not 0.0 <= slope < 6.0:
            raise GeometryError(f"Lipschitz slope must lie in [0, 6), got {slope}")
        x, y = _lattice_coordinates(resolution, 2)
        profile = 0.1 + slope * (0.125 - np.abs(np.mod(x, 0.25) - 0.125))
        mask = (y > profile) & (y < 0.9) & (x > 0.0) & (x < 1.0)
        return cls(mask, name=f"lipschitz({slope:g})")

    @classmethod
    def koch(cls, resolution: int, depth: int = 2) -> "GridDomain":
        """Koch-type island: every edge gains an outward bump on its middle third.

        Raises:
            ResolutionError: If the lattice cannot hold the requested depth
        """
        h = 1.0 / (resolution - 1)
        unit = 6 ** depth
        # bumps of every level stack outward: side * (1 + 2 * (1/6 + 1/18 + ...))
        extent = 1.0 + (1.0 - 3.0 ** (-depth)) / 2.0
        multiple = int(np.floor((1.0 - 4.0 * h) / (extent * unit * h)))
        if multiple < 1:
            raise ResolutionError(
                f"Koch depth {depth} needs resolution > {int(np.ceil(extent * unit + 5))}"
            )
        side_cells = multiple * unit
        origin = (resolution - 1) // 2 - side_cells // 2

        directions = [(1, 0), (0, 1), (-1, 0), (0, -1)]
        pieces: List[Tuple[Tuple[int, int], int]] = [(d, side_cells) for d in directions]
        for _ in range(depth):
            refined: List[Tuple[Tuple[int, int], int]] = []
            for (ux, uy), length in pieces:
                normal = (uy, -ux)
                back = (-uy, ux)
                third, sixth = length // 3, length // 6
                refined.extend([
                    ((ux, uy), third), (normal, sixth), ((ux, uy), third),
                    (back, sixth), ((ux, uy), third),
                ])
            pieces = refined

        vertices = [np.array([origin, origin], dtype=np.int64)]
        for (ux, uy), length in pieces[:-1]:
            vertices.append(vertices[-1] + length * np.array([ux, uy]))
        outline = np.array(vertices)
        if outline.min() < 1 or outline.max() > resolution - 2:
            raise ResolutionError(
                f"Koch depth {depth} outline spans [{outline.min()}, {outline.max()}], "
                f"outside [1, {resolution - 2}]"
            )

        mask = np.zeros((resolution, resolution), dtype=bool)
        closed = np.vstack([outline, outline[:1]])
        for start, end in zip(closed[:-1], closed[1:]):
            if start[0] != end[0]:
                continue
            low, high = sorted((start[1], end[1]))
            # edge sits at x = (start + 1/2) h; toggle every cell to its left
            mask[: start[0] + 1, low + 1: high + 1] ^= True

        domain = cls(mask, name=f"koch({depth})")
        domain.polygon = KochPolygon(vertices=(outline + 0.5) * h, side=side_cells * h, depth=depth)
        return domain

    @classmethod
    def slit(cls, resolution: int) -> "GridDomain":
        """Unit square minus the segment ``{x = 1/2, y <= 1/2}``.

        Raises:
            ResolutionError: If ``resolution`` is even (the slit needs a lattice column)
        """
        if resolution % 2 == 0:
            raise ResolutionError("Slit domain needs an odd resolution")
        mask = np.ones((resolution, resolution), dtype=bool)
        middle = (resolution - 1) // 2
        mask[middle, : middle + 1] = False
        return cls(mask, name="slit")

    @classmethod
    def build(cls, kind: str, resolution: int, dim: int = 2, slope: float = 1.0,
              depth: int = 2, disk_radius: float = 0.45) -> "GridDomain":
        """Construct a named domain."""
        if kind in ("square", "cube"):
            return cls.square(resolution, dim=3 if kind == "cube" else dim)
        if kind in ("disk", "ball"):
            return cls.disk(resolution, radius=disk_radius, dim=3 if kind == "ball" else dim)
        if kind == "lipschitz":
            return cls.lipschitz(resolution, slope)
        if kind == "koch":
            return cls.koch(resolution, depth)
        if kind == "slit":
            return cls.slit(resolution)
        raise GeometryError(f"Unknown domain kind: {kind}")

    # ------------------------------------------------------------------ queries

    @cached_property
    def cell_tree(self) -> cKDTree:
        """KD-tree of interior cell centres."""
        return cKDTree(self.centers)

    @cached_property
    def face_index(self) -> np.ndarray:
        """Boundary face id per ``(cell, axis, side)``, ``-1`` between interior cells."""
        index = np.full((self.n_cells, self.dim, 2), -1, dtype=np.int64)
        index[self.face_owner, self.face_axis, self.face_side] = np.arange(self.n_boundary)
        return index

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def cell_at(self, points: np.ndarray) -> np.ndarray:
        """Cell id containing each point (``-1`` outside the interior)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.rint(pts / self.h).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.resolution), axis=1)
        result = np.full(len(pts), -1, dtype=np.int64)
        result[inside] = self.cell_index[tuple(idx[inside].T)]
        return result

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.cell_at(points) >= 0

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the boundary, zero outside the domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist, _ = self.boundary_tree.query(pts)
        return np.where(self.contains(pts), dist, 0.0)

    def nearest_boundary(self, points: np.ndarray) -> np.ndarray:
        """Index of the nearest boundary point for each query point."""
        _, index = self.boundary_tree.query(np.atleast_2d(points))
        return np.asarray(index, dtype=np.int64)

    def surface_ball(self, x: Sequence[float], r: float) -> np.ndarray:
        """Sorted indices of boundary points with ``|y - x| < r``."""
        hits = self.boundary_tree.query_ball_point(np.asarray(x, dtype=float), r * (1 - 1e-12))
        return np.array(sorted(hits), dtype=np.int64)

    def cells_in_ball(self, x: Sequence[float], r: float) -> np.ndarray:
        """Sorted ids of interior cells with ``|X - x| < r``."""
        hits = self.cell_tree.query_ball_point(np.asarray(x, dtype=float), r * (1 - 1e-12))
        return np.array(sorted(hits), dtype=np.int64)

    def corkscrew(self, x: Sequence[float], r: float) -> Corkscrew:
        """
        Interior point of ``B(x, r)`` maximising ``min(delta, r - |X - x|)``.

        Raises:
            DegenerateBallError: If the ball contains no interior cell
        """
        if r <= 0:
            raise GeometryError(f"Corkscrew radius must be positive, got {r}")
        candidates = self.cells_in_ball(x, r)
        if candidates.size == 0:
            raise DegenerateBallError(f"B({np.round(x, 4).tolist()}, {r:.4g}) has no interior cell")
        offsets = np.linalg.norm(self.centers[candidates] - np.asarray(x, dtype=float), axis=1)
        score = np.minimum(self.delta[candidates], r - offsets)
        best = int(np.argmax(score))
        cell = int(candidates[best])
        return Corkscrew(point=self.centers[cell].copy(), cell=cell,
                         clearance=float(score[best]), radius=float(r))

    @cached_property
    def chain_graph(self) -> csr_matrix:
        """Neighbour graph on interior cells weighted by ``length * mean(1/delta)``."""
        rows, cols, weights = [], [], []
        inverse = 1.0 / self.delta
        for offset in product((-1, 0, 1), repeat=self.dim):
            step = np.array(offset)
            if not step.any():
                continue
            shifted = self.cells + step
            valid = np.all((shifted >= 0) & (shifted < self.resolution), axis=1)
            target = np.full(self.n_cells, -1, dtype=np.int64)
            target[valid] = self.cell_index[tuple(shifted[valid].T)]
            source = np.flatnonzero(target >= 0)
            length = self.h * float(np.linalg.norm(step))
            rows.append(source)
            cols.append(target[source])
            weights.append(length * 0.5 * (inverse[source] + inverse[target[source]]))
        return coo_matrix(
            (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_cells, self.n_cells),
        ).tocsr()

    def harnack_chain(self, X: Sequence[float], Y: Sequence[float]) -> HarnackChain:
        """
        Chain of balls ``B(c, 3 delta(c) / 5)`` joining ``X`` to ``Y``.

        The cells follow the shortest path in the ``1/delta`` metric; balls are
        picked greedily, each reaching the farthest path cell whose ball still
        meets the current one.

        Raises:
            UnreachablePointError: If an endpoint is outside the domain or no path exists
        """
        start, end = (int(c) for c in self.cell_at(np.vstack([X, Y])))
        if start < 0 or end < 0:
            raise UnreachablePointError("Harnack chain endpoints must be interior points")

        _, predecessors = dijkstra(self.chain_graph, indices=start, return_predecessors=True)
        path = [end]
        while path[-1] != start:
            previous = predecessors[path[-1]]
            if previous < 0:
                raise UnreachablePointError(f"No interior path between cells {start} and {end}")
            path.append(int(previous))
        path.reverse()

        centers = self.centers[path]
        clearances = self.delta[path]
        radii = CHAIN_BALL_RATIO * clearances
        chosen = [0]
        gaps = 0
        while chosen[-1] != len(path) - 1:
            current = chosen[-1]
            reach = np.linalg.norm(centers[current + 1:] - centers[current], axis=1)
            meets = np.flatnonzero(reach < radii[current + 1:] + radii[current])
            if meets.size:
                chosen.append(current + 1 + int(meets[-1]))
            else:
                gaps += 1
                chosen.append(current + 1)

        separation = float(np.linalg.norm(np.asarray(Y, float) - np.asarray(X, float)))
        separation /= float(min(self.delta[start], self.delta[end]))
        chain = HarnackChain(centers=centers[chosen], radii=radii[chosen],
                             clearances=clearances[chosen], cells=[path[i] for i in chosen],
                             separation=separation, gaps=gaps)
        logger.debug(f"Harnack chain of {chain.count} balls (separation {separation:.3g}, gaps {gaps})")
        return chain

    def cdc_ratio(self, x: Sequence[float], r: float) -> float:
        """Capacity of the complement in ``B(x, r)`` relative to the whole ball."""
        from core.capacity import cdc_ratio

        return cdc_ratio(self, x, r)

    def submask(self, cells: np.ndarray) -> np.ndarray:
        """Lattice mask of the given interior cell ids."""
        mask = np.zeros_like(self.interior)
        mask[tuple(self.cells[np.asarray(cells, dtype=np.int64)].T)] = True
        return mask

    def summary(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "resolution": self.resolution,
            "spacing": self.h,
            "cells": int(self.n_cells),
            "boundary_points": int(self.n_boundary),
            "surface_measure": float(self.sigma.sum()),
            "diameter": self.diameter,
        }

    def __repr__(self) -> str:
        return f"<GridDomain(name='{self.name}', dim={self.dim}, res={self.resolution})>"


def _lattice_coordinates(resolution: int, dim: int) -> List[np.ndarray]:
    axis = np.linspace(0.0, 1.0, resolution)
    return list(np.meshgrid(*([axis] * dim), indexing="ij"))
