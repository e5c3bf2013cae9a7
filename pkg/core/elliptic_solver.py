"""
Finite-volume divergence-form operators on a GridDomain.

The discrete equation for ``-div(A grad u) = 0`` reads ``K u = -B f``, where
``K`` couples interior cells and ``B`` couples them to boundary faces. Elliptic
measure is then ``omega^X = -B^T K^{-T} e_X`` and the Green function with pole
``Y`` is ``K^{-1} e_Y``.
"""

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, bicgstab, gmres, spilu, splu

from core.coefficients import CoefficientField
from core.domain import GridDomain
from core.error_handler import MaximumPrincipleError, PoleError, SolverConvergenceError


logger = logging.getLogger(__name__)

MAXIMUM_PRINCIPLE_SLACK = 1e-8


@dataclass
class EllipticMeasure:
    """Elliptic measure of every boundary face for one pole."""
    pole: np.ndarray
    cell: int
    values: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.values.sum())

    def of(self, faces: np.ndarray) -> float:
        """Measure of a set of boundary faces."""
        return float(self.values[np.asarray(faces, dtype=np.int64)].sum())


@dataclass
class GreenSample:
    """``G(., Y)`` on every interior cell (zero trace on the boundary)."""
    pole: np.ndarray
    cell: int
    values: np.ndarray


def _harmonic_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble(domain: GridDomain, field: CoefficientField):
    """
    Assemble ``(K, B)`` for ``-div(A grad u)``.

    Normal fluxes use the harmonic mean of ``A_aa`` across a face; boundary
    faces sit half a spacing from their cell. Off-diagonal entries use centred
    tangential differences on faces whose tangential stencil is interior, and
    the result is symmetrised with the transpose field so that assembling
    ``A^T`` gives exactly ``K^T``.

    Returns:
        ``K`` (interior x interior, CSR) and ``B`` (interior x boundary, CSR)
    """
    n, d, h = domain.n_cells, domain.dim, domain.h
    scale = h ** (d - 2)
    A = field.matrices
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for axis in range(d):
        lower = np.flatnonzero(domain.neighbors[:, axis, 1] >= 0)
        upper = domain.neighbors[lower, axis, 1]
        weight = scale * _harmonic_mean(A[lower, axis, axis], A[upper, axis, axis])
        add(lower, lower, weight)
        add(upper, upper, weight)
        add(lower, upper, -weight)
        add(upper, lower, -weight)

    # Dirichlet faces
    face = np.arange(domain.n_boundary)
    owner = domain.face_owner
    boundary_weight = 2.0 * scale * A[owner, domain.face_axis, domain.face_axis]
    add(owner, owner, boundary_weight)
    normal = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    B = coo_matrix((-boundary_weight, (owner, face)), shape=(n, domain.n_boundary)).tocsr()

    mixed = _tangential(domain, A) + _tangential(domain, A.transpose(0, 2, 1)).T
    K = (normal + 0.5 * mixed).tocsr()
    K.sum_duplicates()
    return K, B


def _tangential(domain: GridDomain, A: np.ndarray) -> csr_matrix:
    """Off-diagonal flux terms ``A_ab d_b u`` across faces normal to ``a``."""
    n, d, h = domain.n_cells, domain.dim, domain.h
    scale = h ** (d - 2)
    nb = domain.neighbors
    rows, cols, vals = [], [], []
    for a in range(d):
        lower = np.flatnonzero(nb[:, a, 1] >= 0)
        upper = nb[lower, a, 1]
        for b in range(d):
            if b == a:
                continue
            stencil = np.stack([nb[lower, b, 1], nb[lower, b, 0], nb[upper, b, 1], nb[upper, b, 0]])
            deep = np.all(stencil >= 0, axis=0)
            if not deep.any():
                continue
            lo, up, st = lower[deep], upper[deep], stencil[:, deep]
            coef = -0.25 * scale * 0.5 * (A[lo, a, b] + A[up, a, b])
            signs = (1.0, -1.0, 1.0, -1.0)
            for target, sign in zip(st, signs):
                rows.extend([lo, up])
                cols.extend([target, target])
                vals.extend([sign * coef, -sign * coef])
    if not rows:
        return csr_matrix((n, n))
    return coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()


class EllipticOperator:
    """Assembled operator with a cached factorization shared by every solve."""

    def __init__(self, domain: GridDomain, field: CoefficientField, tolerance: float = 1e-10,
                 direct_limit: int = 400000, krylov: str = "gmres", max_iterations: int = 2000,
                 max_ellipticity: float = 10.0, pole_clearance_cells: int = 2, threads: int = 1):
        """
        Assemble the operator.

        Raises:
            EllipticityError: If the field is not elliptic within ``max_ellipticity``
        """
        self.domain = domain
        self.field = field
        self.tolerance = tolerance
        self.direct_limit = direct_limit
        self.krylov = krylov
        self.max_iterations = max_iterations
        self.pole_clearance = pole_clearance_cells * domain.h
        self.threads = max(1, threads)
        self.max_ellipticity = max_ellipticity
        self.ellipticity = field.check(max_ellipticity)

        started = time.perf_counter()
        self.K, self.B = assemble(domain, field)
        self._lu = None
        self._ilu = None
        self._lock = threading.Lock()
        logger.info(
            f"Assembled '{field.name}' on '{domain.name}': {domain.n_cells} unknowns, "
            f"nnz={self.K.nnz}, Lambda={self.ellipticity:.3f} "
            f"({time.perf_counter() - started:.2f}s)"
        )

    @classmethod
    def from_config(cls, domain: GridDomain, field: CoefficientField, solver_config,
                    threads: int = 1) -> "EllipticOperator":
        return cls(
            domain, field, tolerance=solver_config.tolerance,
            direct_limit=solver_config.direct_limit, krylov=solver_config.krylov,
            max_iterations=solver_config.max_iterations,
            max_ellipticity=solver_config.max_ellipticity,
            pole_clearance_cells=solver_config.pole_clearance_cells, threads=threads,
        )

    # ------------------------------------------------------------------ linear algebra

    @property
    def direct(self) -> bool:
        return self.domain.n_cells <= self.direct_limit

    def _factor(self):
        with self._lock:
            if self.direct and self._lu is None:
                self._lu = splu(csc_matrix(self.K))
            elif not self.direct and self._ilu is None:
                self._ilu = spilu(csc_matrix(self.K))
        return self._lu if self.direct else self._ilu

    def _krylov(self, matrix, rhs: np.ndarray, preconditioner) -> np.ndarray:
        history: List[float] = []
        if self.krylov == "bicgstab":
            def track(xk):
                history.append(float(np.linalg.norm(matrix @ xk - rhs)))
            x, info = bicgstab(matrix, rhs, M=preconditioner, rtol=self.tolerance,
                               atol=0.0, maxiter=self.max_iterations, callback=track)
        else:
            x, info = gmres(matrix, rhs, M=preconditioner, rtol=self.tolerance, atol=0.0,
                            maxiter=self.max_iterations, callback=history.append,
                            callback_type="pr_norm")
        if info != 0:
            raise SolverConvergenceError(
                f"{self.krylov} stopped with info={info} after {len(history)} iterations",
                residual_history=history,
            )
        return x

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        """
        Solve ``K x = rhs`` (or ``K^T x = rhs``) to the relative residual tolerance.

        Raises:
            SolverConvergenceError: If the residual tolerance is not met
        """
        factor = self._factor()
        matrix = self.K.T.tocsr() if transpose else self.K
        if self.direct:
            x = factor.solve(rhs, trans="T" if transpose else "N")
        else:
            trans = "T" if transpose else "N"
            preconditioner = LinearOperator(matrix.shape, lambda v: factor.solve(v, trans=trans))
            x = self._krylov(matrix, rhs, preconditioner)
        scale = max(float(np.linalg.norm(rhs)), 1e-300)
        residual = float(np.linalg.norm(matrix @ x - rhs)) / scale
        if residual > self.tolerance:
            raise SolverConvergenceError(
                f"Relative residual {residual:.3e} exceeds {self.tolerance:.1e}",
                residual_history=[residual],
            )
        return x

    def solve_many(self, columns: Sequence[np.ndarray], transpose: bool = False) -> List[np.ndarray]:
        """Independent right-hand sides, solved concurrently, returned in input order."""
        if self.threads == 1 or len(columns) < 2:
            return [self.solve(c, transpose=transpose) for c in columns]
        self._factor()
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(lambda c: self.solve(c, transpose=transpose), columns))

    # ------------------------------------------------------------------ boundary value problems

    def solve_dirichlet(self, data: np.ndarray) -> np.ndarray:
        """
        Interior solution with boundary values ``data`` on the faces.

        Raises:
            MaximumPrincipleError: If the solution leaves ``[min f, max f]``
        """
        f = np.asarray(data, dtype=float)
        if f.shape != (self.domain.n_boundary,) or not np.all(np.isfinite(f)):
            raise ValueError(f"Boundary data must be a finite vector of length {self.domain.n_boundary}")
        u = self.solve(-(self.B @ f))
        low, high = float(f.min()), float(f.max())
        slack = MAXIMUM_PRINCIPLE_SLACK * max(1.0, abs(low), abs(high))
        if u.min() < low - slack or u.max() > high + slack:
            raise MaximumPrincipleError(
                f"Solution range [{u.min():.3e}, {u.max():.3e}] leaves data range [{low:.3e}, {high:.3e}]"
            )
        return u

    def pole_cell(self, X: Sequence[float]) -> int:
        """
        Cell of an admissible pole.

        Raises:
            PoleError: If ``X`` is outside the domain or too close to the boundary
        """
        point = np.asarray(X, dtype=float)
        cell = int(self.domain.cell_at(point)[0])
        if cell < 0:
            raise PoleError(f"Pole {np.round(point, 4).tolist()} is not an interior point")
        if self.domain.delta[cell] < self.pole_clearance * (1 - 1e-9):
            raise PoleError(
                f"Pole {np.round(point, 4).tolist()} is within {self.domain.delta[cell]:.3g} "
                f"of the boundary (minimum {self.pole_clearance:.3g})"
            )
        return cell

    def _unit(self, cell: int) -> np.ndarray:
        e = np.zeros(self.domain.n_cells)
        e[cell] = 1.0
        return e

    def elliptic_measure(self, X: Sequence[float]) -> EllipticMeasure:
        """Measure with pole ``X`` from a single adjoint solve."""
        cell = self.pole_cell(X)
        adjoint = self.solve(self._unit(cell), transpose=True)
        values = -(self.B.T @ adjoint)
        return EllipticMeasure(pole=self.domain.centers[cell].copy(), cell=cell, values=values)

    def elliptic_measures(self, poles: Sequence[Sequence[float]]) -> List[EllipticMeasure]:
        cells = [self.pole_cell(X) for X in poles]
        adjoints = self.solve_many([self._unit(c) for c in cells], transpose=True)
        return [
            EllipticMeasure(pole=self.domain.centers[c].copy(), cell=c, values=-(self.B.T @ a))
            for c, a in zip(cells, adjoints)
        ]

    def green_function(self, Y: Sequence[float]) -> GreenSample:
        """``G(., Y)`` from a unit source at the pole cell."""
        cell = self.pole_cell(Y)
        values = self.solve(self._unit(cell))
        return GreenSample(pole=self.domain.centers[cell].copy(), cell=cell, values=values)

    def green_functions(self, poles: Sequence[Sequence[float]]) -> List[GreenSample]:
        cells = [self.pole_cell(Y) for Y in poles]
        columns = self.solve_many([self._unit(c) for c in cells])
        return [GreenSample(pole=self.domain.centers[c].copy(), cell=c, values=v)
                for c, v in zip(cells, columns)]

    def green_adjoint(self, X: Sequence[float]) -> GreenSample:
        """``G(X, .)``, i.e. the Green function of the transpose operator with pole ``X``."""
        cell = self.pole_cell(X)
        values = self.solve(self._unit(cell), transpose=True)
        return GreenSample(pole=self.domain.centers[cell].copy(), cell=cell, values=values)

    def transpose(self) -> "EllipticOperator":
        return EllipticOperator(
            self.domain, self.field.transpose(), tolerance=self.tolerance,
            direct_limit=self.direct_limit, krylov=self.krylov, max_iterations=self.max_iterations,
            max_ellipticity=self.max_ellipticity,
            pole_clearance_cells=int(round(self.pole_clearance / self.domain.h)), threads=self.threads,
        )

    # ------------------------------------------------------------------ gradients

    def gradient(self, u: np.ndarray, boundary: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Cellwise gradient: central differences, one-sided next to the boundary.

        ``boundary`` supplies face values (default zero) at half spacing.
        """
        return cell_gradient(self.domain, u, boundary)

    def __repr__(self) -> str:
        return f"<EllipticOperator(field='{self.field.name}', unknowns={self.domain.n_cells})>"


def cell_gradient(domain: GridDomain, u: np.ndarray, boundary: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Gradient of a cell function: central differences between interior
    neighbours, with faces taken at half spacing where a neighbour is exterior.
    """
    h = domain.h
    face_values = np.zeros(domain.n_boundary) if boundary is None else np.asarray(boundary, float)
    face_of = domain.face_index
    grad = np.zeros((domain.n_cells, domain.dim))
    for axis in range(domain.dim):
        up_cell = domain.neighbors[:, axis, 1]
        down_cell = domain.neighbors[:, axis, 0]
        up_value = np.where(up_cell >= 0, u[np.maximum(up_cell, 0)],
                            face_values[np.maximum(face_of[:, axis, 1], 0)])
        down_value = np.where(down_cell >= 0, u[np.maximum(down_cell, 0)],
                              face_values[np.maximum(face_of[:, axis, 0], 0)])
        up_step = np.where(up_cell >= 0, h, 0.5 * h)
        down_step = np.where(down_cell >= 0, h, 0.5 * h)
        grad[:, axis] = (up_value - down_value) / (up_step + down_step)
    return grad
