"""
Coefficient fields: one real ``d x d`` matrix per interior cell.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from core.domain import GridDomain
from core.error_handler import EllipticityError


logger = logging.getLogger(__name__)

FIELD_KINDS = ("identity", "diagonal", "random", "bump")


class CoefficientField:
    """Cellwise matrix field ``A`` over the interior cells of a domain."""

    def __init__(self, domain: GridDomain, matrices: np.ndarray, name: str = "A"):
        values = np.asarray(matrices, dtype=float)
        expected = (domain.n_cells, domain.dim, domain.dim)
        if values.shape != expected:
            raise ValueError(f"Coefficient array has shape {values.shape}, expected {expected}")
        self.domain = domain
        self.matrices = values
        self.name = name

    # ------------------------------------------------------------------ factories

    @classmethod
    def identity(cls, domain: GridDomain) -> "CoefficientField":
        return cls.constant(domain, np.eye(domain.dim), name="identity")

    @classmethod
    def constant(cls, domain: GridDomain, matrix: np.ndarray, name: str = "constant") -> "CoefficientField":
        tiled = np.broadcast_to(np.asarray(matrix, dtype=float), (domain.n_cells, domain.dim, domain.dim))
        return cls(domain, tiled.copy(), name=name)

    @classmethod
    def diagonal(cls, domain: GridDomain, entries: Sequence[float]) -> "CoefficientField":
        return cls.constant(domain, np.diag(entries), name="diagonal")

    @classmethod
    def random(cls, domain: GridDomain, ellipticity: float, seed: int = 0) -> "CoefficientField":
        """
        Random field with ellipticity at most ``ellipticity``.

        The symmetric part has eigenvalues in ``[L**-0.5, L**0.5]``; the skew part
        has spectral norm at most ``L - L**0.5``.
        """
        if ellipticity < 1.0:
            raise EllipticityError(f"Ellipticity must be at least 1, got {ellipticity}")
        rng = np.random.default_rng(seed)
        n, d = domain.n_cells, domain.dim
        root = np.sqrt(ellipticity)
        q, _ = np.linalg.qr(rng.normal(size=(n, d, d)))
        eig = rng.uniform(1.0 / root, root, size=(n, d))
        sym = np.einsum("nij,nj,nkj->nik", q, eig, q)
        raw = rng.normal(size=(n, d, d))
        skew = 0.5 * (raw - raw.transpose(0, 2, 1))
        norms = np.linalg.norm(skew, ord=2, axis=(1, 2))
        scale = rng.uniform(0.0, 1.0, size=n) * (ellipticity - root) / np.maximum(norms, 1e-300)
        return cls(domain, sym + scale[:, None, None] * skew, name=f"random(L={ellipticity:g})")

    @classmethod
    def bump(cls, domain: GridDomain, amplitude: float, center: Sequence[float], radius: float,
             base: Optional["CoefficientField"] = None,
             matrix: Optional[np.ndarray] = None) -> "CoefficientField":
        """``A0 + amplitude * phi * M`` with a smooth bump ``phi`` supported in ``B(center, radius)``."""
        base = base if base is not None else cls.identity(domain)
        shape = np.eye(domain.dim) if matrix is None else np.asarray(matrix, dtype=float)
        offset = np.linalg.norm(domain.centers - np.asarray(center, dtype=float), axis=1) / radius
        profile = np.zeros(domain.n_cells)
        inside = offset < 1.0
        profile[inside] = np.exp(1.0 - 1.0 / (1.0 - offset[inside] ** 2))
        values = base.matrices + amplitude * profile[:, None, None] * shape
        return cls(domain, values, name=f"bump({amplitude:g})")

    # ------------------------------------------------------------------ operator families

    def blend(self, other: "CoefficientField", t: float) -> "CoefficientField":
        """``(1 - t) self + t other``."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"Blend parameter must lie in [0, 1], got {t}")
        return CoefficientField(self.domain, (1.0 - t) * self.matrices + t * other.matrices,
                                name=f"blend({t:g})")

    def truncate(self, other: "CoefficientField", j: int) -> "CoefficientField":
        """``other`` where ``delta >= 2**-j``, ``self`` elsewhere."""
        if j < 0:
            raise ValueError(f"Truncation level must be non-negative, got {j}")
        deep = self.domain.delta >= 2.0 ** (-j)
        values = np.where(deep[:, None, None], other.matrices, self.matrices)
        return CoefficientField(self.domain, values, name=f"truncate({j})")

    def transpose(self) -> "CoefficientField":
        return CoefficientField(self.domain, self.matrices.transpose(0, 2, 1).copy(),
                                name=f"{self.name}^T")

    def difference(self, other: "CoefficientField") -> np.ndarray:
        """Spectral norm of ``self - other`` in every cell."""
        return np.linalg.norm(self.matrices - other.matrices, ord=2, axis=(1, 2))

    # ------------------------------------------------------------------ ellipticity

    def cell_ellipticity(self) -> np.ndarray:
        """Smallest admissible ``Lambda`` per cell (``inf`` where the symmetric part is not positive)."""
        sym = 0.5 * (self.matrices + self.matrices.transpose(0, 2, 1))
        lowest = np.linalg.eigvalsh(sym)[:, 0]
        bound = np.linalg.norm(self.matrices, ord=2, axis=(1, 2))
        with np.errstate(divide="ignore"):
            coercive = np.where(lowest > 0, 1.0 / np.maximum(lowest, 1e-300), np.inf)
        return np.maximum(np.maximum(coercive, bound), 1.0)

    @property
    def ellipticity(self) -> float:
        return float(self.cell_ellipticity().max())

    def check(self, limit: float) -> float:
        """
        Return the ellipticity constant.

        Raises:
            EllipticityError: If some cell is not elliptic or exceeds ``limit``
        """
        per_cell = self.cell_ellipticity()
        worst = int(np.argmax(per_cell))
        value = float(per_cell[worst])
        if not np.isfinite(value) or value > limit:
            raise EllipticityError(
                f"Field '{self.name}' has ellipticity {value:.4g} at cell {worst} (limit {limit:g})",
                cell=worst, value=value,
            )
        return value

    def __repr__(self) -> str:
        return f"<CoefficientField(name='{self.name}', cells={self.domain.n_cells})>"


def build_field(domain: GridDomain, kind: str, ellipticity: float = 4.0, seed: int = 0,
                amplitude: float = 0.1, center: Sequence[float] = (0.5, 0.3),
                radius: float = 0.2, entries: Optional[Sequence[float]] = None) -> CoefficientField:
    """Coefficient field from a config-style description."""
    if kind == "identity":
        return CoefficientField.identity(domain)
    if kind == "diagonal":
        return CoefficientField.diagonal(domain, entries or [1.0] * domain.dim)
    if kind == "random":
        return CoefficientField.random(domain, ellipticity, seed=seed)
    if kind == "bump":
        centre = list(center) + [0.5] * (domain.dim - len(center))
        return CoefficientField.bump(domain, amplitude, centre[: domain.dim], radius)
    raise ValueError(f"Unknown coefficient field kind '{kind}', expected one of {FIELD_KINDS}")
