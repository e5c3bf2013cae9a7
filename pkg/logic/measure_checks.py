"""
Property sweeps for elliptic measure and Green functions, and the
perturbation identity relating two operators.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.dyadic_grid import DyadicCube, DyadicGrid
from core.elliptic_solver import EllipticOperator, cell_gradient
from core.error_handler import MeasureError, PoleError


logger = logging.getLogger(__name__)


@dataclass
class SweepReport:
    """Fitted constant of one property over a sampled configuration set."""
    name: str
    constant: float
    samples: int
    lowest: float = np.nan
    highest: float = np.nan
    argmax: Dict[str, float] = field(default_factory=dict)
    values: List[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "constant": self.constant,
            "samples": self.samples,
            "lowest": self.lowest,
            "highest": self.highest,
            "argmax": self.argmax,
        }


@dataclass
class IdentityResidual:
    """Both sides of the perturbation identity at one point."""
    difference: float
    integral: float
    discrete: float

    @property
    def discrepancy(self) -> float:
        scale = max(abs(self.difference), abs(self.integral))
        return abs(self.difference - self.integral) / scale if scale > 0 else 0.0


def perturbation_identity_check(base: EllipticOperator, perturbed: EllipticOperator,
                                data: np.ndarray, X: Sequence[float]) -> IdentityResidual:
    """
    ``u(X) - u0(X)`` against the volume integral of ``(A0 - A)^T grad G(., X) . grad u0``.

    ``discrete`` is the same pairing taken with the assembled matrices, so it
    matches ``difference`` to solver precision whenever both operators share
    their boundary coupling.
    """
    domain = base.domain
    u0 = base.solve_dirichlet(data)
    u = perturbed.solve_dirichlet(data)
    green = perturbed.green_adjoint(X)
    cell = green.cell

    grad_green = cell_gradient(domain, green.values)
    grad_u0 = cell_gradient(domain, u0, boundary=data)
    gap = base.field.matrices - perturbed.field.matrices
    flux = np.einsum("nab,nb->na", gap, grad_u0)
    integral = float(np.sum(grad_green * flux) * domain.cell_volume)
    discrete = float(green.values @ ((base.K - perturbed.K) @ u0))
    result = IdentityResidual(difference=float(u[cell] - u0[cell]), integral=integral, discrete=discrete)
    logger.debug(
        f"Perturbation identity at {np.round(green.pole, 4).tolist()}: "
        f"diff={result.difference:.4e}, integral={integral:.4e}, discrete={discrete:.4e}"
    )
    return result


# ---------------------------------------------------------------------- helpers

def admissible_cubes(operator: EllipticOperator, grid: DyadicGrid,
                     samples: Optional[int] = None) -> List[DyadicCube]:
    """Cubes whose corkscrew is a valid pole, evenly thinned to ``samples``."""
    cubes = []
    for cube in grid.cubes:
        try:
            operator.pole_cell(grid.corkscrew(cube.id).point)
        except PoleError:
            continue
        cubes.append(cube)
    if samples is not None and len(cubes) > samples:
        picks = np.unique(np.linspace(0, len(cubes) - 1, samples).astype(int))
        cubes = [cubes[i] for i in picks]
    return cubes


def _report(name: str, values: List[float], configs: List[dict], largest: bool = True) -> SweepReport:
    if not values:
        raise MeasureError(f"No admissible configurations for the {name} sweep")
    data = np.asarray(values)
    index = int(np.argmax(data) if largest else np.argmin(data))
    report = SweepReport(
        name=name, constant=float(data[index]), samples=len(values),
        lowest=float(data.min()), highest=float(data.max()),
        argmax=configs[index], values=[float(v) for v in values],
    )
    logger.info(f"{name}: constant {report.constant:.4g} over {report.samples} samples")
    return report


# ---------------------------------------------------------------------- sweeps

def bourgain_sweep(operator: EllipticOperator, grid: DyadicGrid, samples: int = 50) -> SweepReport:
    """Infimum of ``omega^{X_Delta}(Delta)`` over cube balls."""
    cubes = admissible_cubes(operator, grid, samples)
    measures = operator.elliptic_measures([grid.corkscrew(c.id).point for c in cubes])
    values, configs = [], []
    for cube, omega in zip(cubes, measures):
        values.append(omega.of(grid.surface_ball(cube)))
        configs.append({"cube": cube.id, "x": cube.x.tolist(), "r": cube.radius})
    return _report("bourgain", values, configs, largest=False)


def _far_poles(operator: EllipticOperator, grid: DyadicGrid, cube: DyadicCube,
               factor: float, limit: int) -> List[np.ndarray]:
    """Corkscrews of other cubes at distance at least ``factor * r_Q`` from ``x_Q``."""
    poles = []
    for other in admissible_cubes(operator, grid):
        point = grid.corkscrew(other.id).point
        if np.linalg.norm(point - cube.x) >= factor * cube.radius:
            poles.append(point)
        if len(poles) >= limit:
            break
    return poles


def cfms_sweep(operator: EllipticOperator, grid: DyadicGrid, samples: int = 20,
               poles_per_cube: int = 3) -> SweepReport:
    """Spread of ``omega^X(Delta) / (r**(d-1) G(X, X_Delta))`` for ``X`` outside ``2B``."""
    d = operator.domain.dim
    values, configs = [], []
    for cube in admissible_cubes(operator, grid, samples):
        green = operator.green_function(grid.corkscrew(cube.id).point)
        ball = grid.surface_ball(cube)
        for X in _far_poles(operator, grid, cube, 2.0, poles_per_cube):
            omega = operator.elliptic_measure(X)
            g = green.values[omega.cell]
            if g <= 0:
                continue
            values.append(omega.of(ball) / (cube.radius ** (d - 1) * g))
            configs.append({"cube": cube.id, "X": omega.pole.tolist(), "r": cube.radius})
    report = _report("cfms", values, configs)
    report.constant = max(report.highest, 1.0 / report.lowest) if report.lowest > 0 else np.inf
    return report


def doubling_sweep(operator: EllipticOperator, grid: DyadicGrid,
                   X: Optional[Sequence[float]] = None) -> SweepReport:
    """``omega^X(2 Delta) / omega^X(Delta)`` for cube balls with ``X`` outside ``4B``."""
    pole = np.asarray(X, float) if X is not None else grid.corkscrew(grid.cubes[0].id).point
    omega = operator.elliptic_measure(pole)
    values, configs = [], []
    for cube in grid.cubes:
        if np.linalg.norm(omega.pole - cube.x) < 4.0 * cube.radius:
            continue
        small = omega.of(operator.domain.surface_ball(cube.x, cube.radius))
        if small <= 0:
            continue
        large = omega.of(operator.domain.surface_ball(cube.x, 2.0 * cube.radius))
        values.append(large / small)
        configs.append({"cube": cube.id, "x": cube.x.tolist(), "r": cube.radius})
    return _report("doubling", values, configs)


def change_of_pole_sweep(operator: EllipticOperator, grid: DyadicGrid, samples: int = 10,
                         X: Optional[Sequence[float]] = None, depth: int = 2) -> SweepReport:
    """Spread of ``(omega^X(Delta)/omega^X(Delta0)) / omega^{X_Delta0}(Delta)`` for ``Delta`` in ``Delta0``."""
    pole = np.asarray(X, float) if X is not None else grid.corkscrew(grid.cubes[0].id).point
    omega = operator.elliptic_measure(pole)
    values, configs = [], []
    for top in admissible_cubes(operator, grid, samples):
        if np.linalg.norm(omega.pole - top.x) < 4.0 * top.radius:
            continue
        outer = grid.surface_ball(top)
        local = operator.elliptic_measure(grid.corkscrew(top.id).point)
        base = omega.of(outer)
        if base <= 0:
            continue
        for cube in grid.descendants(top, max_depth=depth)[1:]:
            inner = grid.surface_ball(cube)
            if inner.size == 0 or not np.all(np.isin(inner, outer)):
                continue
            reference = local.of(inner)
            if reference <= 0:
                continue
            values.append(omega.of(inner) / base / reference)
            configs.append({"top": top.id, "cube": cube.id, "r": cube.radius})
    report = _report("change_of_pole", values, configs)
    report.constant = max(report.highest, 1.0 / report.lowest) if report.lowest > 0 else np.inf
    return report


def green_size_sweep(operator: EllipticOperator, samples: int = 10, seed: int = 0) -> SweepReport:
    """Largest ``G(X, Y) |X - Y|**(d-2)`` over random pole pairs at least two spacings apart."""
    domain = operator.domain
    rng = np.random.default_rng(seed)
    candidates = np.flatnonzero(domain.delta >= operator.pole_clearance * (1 - 1e-9))
    poles = domain.centers[rng.choice(candidates, size=min(samples, candidates.size), replace=False)]
    values, configs = [], []
    for green in operator.green_functions(poles):
        offset = np.linalg.norm(domain.centers - green.pole, axis=1)
        keep = offset >= 2.0 * domain.h
        weighted = green.values[keep] * offset[keep] ** (domain.dim - 2)
        best = int(np.argmax(weighted))
        values.append(float(weighted[best]))
        configs.append({"Y": green.pole.tolist(), "X": domain.centers[keep][best].tolist()})
    return _report("green_size", values, configs)
