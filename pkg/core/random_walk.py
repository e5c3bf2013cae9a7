"""
Walk-on-spheres estimate of harmonic measure (``A = I``).

Walkers jump to a uniformly random point on the largest sphere that stays
inside the domain until they come within half a spacing of the boundary, and
then stop at the nearest boundary face.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.domain import GridDomain
from core.error_handler import UnreachablePointError


logger = logging.getLogger(__name__)

MAX_STEPS = 10000


@dataclass
class WalkHistogram:
    """Hit counts per boundary face."""
    pole: np.ndarray
    counts: np.ndarray
    walks: int
    mean_steps: float

    @property
    def estimate(self) -> np.ndarray:
        return self.counts / self.walks

    def of(self, faces: np.ndarray) -> float:
        return float(self.counts[np.asarray(faces, dtype=np.int64)].sum() / self.walks)

    def standard_error(self, faces: np.ndarray) -> float:
        p = self.of(faces)
        return float(np.sqrt(p * (1.0 - p) / self.walks))


def walk_on_spheres(domain: GridDomain, X: Sequence[float], n_walks: int = 20000,
                    seed: int = 0) -> WalkHistogram:
    """
    Boundary hit histogram of ``n_walks`` walkers started at ``X``.

    Raises:
        UnreachablePointError: If ``X`` is not an interior point
    """
    start = np.asarray(X, dtype=float)
    if not domain.contains(start)[0]:
        raise UnreachablePointError(f"Walk start {np.round(start, 4).tolist()} is not interior")

    rng = np.random.default_rng(seed)
    # nearest face centre overestimates the staircase distance by at most half a face diagonal
    slack = 0.5 * domain.h * np.sqrt(domain.dim - 1)
    stop = 0.5 * domain.h
    position = np.tile(start, (n_walks, 1))
    active = np.ones(n_walks, dtype=bool)
    hits = np.full(n_walks, -1, dtype=np.int64)
    steps = np.zeros(n_walks, dtype=np.int64)

    for _ in range(MAX_STEPS):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        dist, nearest = domain.boundary_tree.query(position[idx])
        radius = dist - slack
        done = radius < stop
        hits[idx[done]] = nearest[done]
        active[idx[done]] = False
        moving = idx[~done]
        if moving.size == 0:
            continue
        direction = rng.normal(size=(moving.size, domain.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        position[moving] += radius[~done, None] * direction
        steps[moving] += 1

    if active.any():
        _, nearest = domain.boundary_tree.query(position[active])
        hits[active] = nearest
        logger.warning(f"{int(active.sum())} walkers hit the step limit {MAX_STEPS}")

    counts = np.bincount(hits, minlength=domain.n_boundary).astype(float)
    result = WalkHistogram(pole=start, counts=counts, walks=n_walks, mean_steps=float(steps.mean()))
    logger.info(
        f"Walk on spheres from {np.round(start, 4).tolist()}: {n_walks} walks, "
        f"{result.mean_steps:.1f} steps on average"
    )
    return result
