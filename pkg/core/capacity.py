"""Discrete condenser capacity and the capacity density condition."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from core.error_handler import GeometryError


logger = logging.getLogger(__name__)


@dataclass
class CapacityProfile:
    """Worst capacity density ratio over sampled boundary balls."""
    ratio: float
    argmin_point: np.ndarray
    argmin_radius: float
    samples: int


def _ball_lattice(domain, x: np.ndarray, outer: float):
    """Integer lattice points with centre in ``B(x, outer)``, plus interior flags."""
    low = np.floor((x - outer) / domain.h).astype(int)
    high = np.ceil((x + outer) / domain.h).astype(int)
    axes = [np.arange(lo, hi + 1) for lo, hi in zip(low, high)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    inside_box = np.all((grid >= 0) & (grid < domain.resolution), axis=1)
    interior = np.zeros(len(grid), dtype=bool)
    interior[inside_box] = domain.interior[tuple(grid[inside_box].T)]
    return grid, axes, interior


def condenser_capacity(domain, x: Sequence[float], r: float, compact: np.ndarray,
                       grid: np.ndarray, axes) -> float:
    """
    Capacity of ``compact`` (a mask over ``grid``) relative to ``B(x, 2r)``.

    The potential is 1 on the compact set and 0 on lattice points outside the
    open ball ``B(x, 2r)``; the energy sums squared differences across lattice
    faces with weight ``h**(d-2)``.
    """
    if not compact.any():
        return 0.0
    centre = np.asarray(x, dtype=float)
    shape = tuple(len(a) for a in axes)
    inside = np.linalg.norm(grid * domain.h - centre, axis=1) < 2.0 * r
    free = inside & ~compact
    number = np.full(len(grid), -1, dtype=np.int64)
    number[free] = np.arange(int(free.sum()))
    value = compact.astype(float)

    flat = np.arange(len(grid)).reshape(shape)
    rows, cols, data = [], [], []
    rhs = np.zeros(int(free.sum()))
    diagonal = np.zeros(int(free.sum()))
    edges_a, edges_b = [], []
    for axis in range(domain.dim):
        a = np.take(flat, np.arange(shape[axis] - 1), axis=axis).ravel()
        b = np.take(flat, np.arange(1, shape[axis]), axis=axis).ravel()
        edges_a.append(a)
        edges_b.append(b)
    ea = np.concatenate(edges_a)
    eb = np.concatenate(edges_b)

    for u, v in ((ea, eb), (eb, ea)):
        active = free[u]
        np.add.at(diagonal, number[u[active]], 1.0)
        both = active & free[v]
        rows.append(number[u[both]])
        cols.append(number[v[both]])
        data.append(-np.ones(int(both.sum())))
        fixed = active & ~free[v]
        np.add.at(rhs, number[u[fixed]], value[v[fixed]])

    n = int(free.sum())
    if n:
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        data.append(diagonal)
        matrix = coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsc()
        value[free] = spsolve(matrix, rhs)

    touched = inside[ea] | inside[eb]
    energy = np.sum((value[ea[touched]] - value[eb[touched]]) ** 2)
    return float(energy * domain.h ** (domain.dim - 2))


def cdc_ratio(domain, x: Sequence[float], r: float) -> float:
    """
    ``Cap(closed ball minus domain) / Cap(closed ball)`` at centre ``x``, radius ``r``.

    Raises:
        GeometryError: If ``r`` is not resolved by the lattice
    """
    if r < domain.h:
        raise GeometryError(f"Radius {r:.3g} is below the lattice spacing {domain.h:.3g}")
    centre = np.asarray(x, dtype=float)
    grid, axes, interior = _ball_lattice(domain, centre, 2.0 * r)
    closed = np.linalg.norm(grid * domain.h - centre, axis=1) <= r
    exterior_part = closed & ~interior
    whole = condenser_capacity(domain, centre, r, closed, grid, axes)
    part = condenser_capacity(domain, centre, r, exterior_part, grid, axes)
    return part / whole if whole > 0 else 0.0


def cdc_profile(domain, points: np.ndarray, radii: Sequence[float],
                limit: Optional[int] = None) -> CapacityProfile:
    """Smallest ``cdc_ratio`` over the given boundary points and radii."""
    pts = np.atleast_2d(points)
    if limit is not None and len(pts) > limit:
        pts = pts[np.linspace(0, len(pts) - 1, limit).astype(int)]
    best = (np.inf, pts[0], float(radii[0]))
    count = 0
    for point in pts:
        for r in radii:
            ratio = cdc_ratio(domain, point, r)
            count += 1
            if ratio < best[0]:
                best = (ratio, point, float(r))
    logger.info(f"CDC profile on '{domain.name}': min ratio {best[0]:.4f} over {count} balls")
    return CapacityProfile(ratio=float(best[0]), argmin_point=np.array(best[1]),
                           argmin_radius=best[2], samples=count)
