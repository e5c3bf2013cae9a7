"""
Invariant suites of every module, evaluated on a set of test domains.

``verify_all`` never raises on a failing invariant: the error goes through the
ErrorHandler and the matrix cell becomes ``False``. Rows that do not apply to a
profile are ``None``.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.config_manager import ConfigManager
from core.coefficients import CoefficientField
from core.cube_tree import CubeTree
from core.capacity import cdc_profile
from core.db_manager import RunRegistry
from core.error_handler import get_error_handler
from logic.carleson import comparability_check, duality_check
from logic.experiment_runner import PROFILES, Laboratory, build_laboratory
from logic.measure_checks import green_size_sweep, perturbation_identity_check
from logic.perturbation import rh_constant, rn_density
from logic.sfnt import ConeFamily, cme_functional, djk_bounds_check, djk_nu


logger = logging.getLogger(__name__)

PLANAR = ("square", "disk", "lipschitz", "koch")
SMOOTH = ("square", "disk", "lipschitz")
CUBE_RESOLUTION_CAP = 33


@dataclass
class InvariantCheck:
    name: str
    module: str
    run: Callable[[Laboratory], Tuple[bool, str]]
    profiles: Optional[Tuple[str, ...]] = None

    def applies(self, profile: str) -> bool:
        return self.profiles is None or profile in self.profiles


# ---------------------------------------------------------------------- checks

def _dyadic_partition(lab: Laboratory) -> Tuple[bool, str]:
    grid = lab.grid
    for k in range(grid.k_min, grid.k_max + 1):
        counts = np.zeros(grid.n_points, dtype=np.int64)
        for cube in grid.cubes_at(k):
            counts[cube.members] += 1
        if not np.all(counts == 1):
            return False, f"generation {k} does not partition the boundary"
    for cube in grid.cubes:
        if cube.children:
            union = np.sort(np.concatenate([grid.cubes[c].members for c in cube.children]))
            if not np.array_equal(union, np.sort(cube.members)):
                return False, f"children of cube {cube.id} do not tile it"
    return True, f"{len(grid.cubes)} cubes over {grid.k_max - grid.k_min + 1} generations"


def _dyadic_sandwich(lab: Laboratory) -> Tuple[bool, str]:
    constant = lab.grid.sandwich_constant()
    return bool(np.isfinite(constant)), f"sandwich constant {constant:.3f}"


def _whitney_cover(lab: Laboratory) -> Tuple[bool, str]:
    bounds = lab.whitney.bounds()
    limit = 12 if lab.domain.dim == 2 else 64
    ok = bounds.covered and bounds.overlap <= limit
    return ok, f"covered={bounds.covered}, overlap {bounds.overlap} (limit {limit})"


def _box_sandwich(lab: Laboratory) -> Tuple[bool, str]:
    kappa0, kappa1 = lab.regions.sandwich_constants()
    return bool(np.isfinite(kappa0) and kappa1 > 0), f"kappa0={kappa0:.3f}, kappa1={kappa1:.3f}"


def _cdc(lab: Laboratory) -> Tuple[bool, str]:
    h = lab.domain.h
    profile = cdc_profile(lab.domain, lab.domain.boundary_points, [4 * h, 8 * h], limit=25)
    return profile.ratio >= 0.1, f"min capacity ratio {profile.ratio:.4f}"


def _measure_mass(lab: Laboratory) -> Tuple[bool, str]:
    mass = lab.operator.elliptic_measure(lab.pole).mass
    return abs(mass - 1.0) <= 1e-8, f"omega(boundary) = {mass:.12f}"


def _green_transpose(lab: Laboratory) -> Tuple[bool, str]:
    op = lab.operator
    domain = lab.domain
    X = lab.pole
    far = np.linalg.norm(domain.centers - X, axis=1) >= 0.25
    Y = domain.centers[int(np.argmax(np.where(far, domain.delta, 0.0)))]
    forward = op.green_function(Y)
    adjoint = op.green_adjoint(X)
    a, b = forward.values[adjoint.cell], adjoint.values[forward.cell]
    gap = abs(a - b) / max(abs(a), 1e-300)
    return gap <= 1e-8, f"relative gap {gap:.3e}"


def _green_size(lab: Laboratory) -> Tuple[bool, str]:
    report = green_size_sweep(lab.operator, samples=5)
    return bool(np.isfinite(report.constant)), f"G |X-Y|^(d-2) <= {report.constant:.4f}"


def _tent_duality(lab: Laboratory) -> Tuple[bool, str]:
    tree = CubeTree.from_grid(lab.grid)
    rng = np.random.default_rng(0)
    for _ in range(20):
        alpha = rng.normal(size=tree.n_nodes)
        beta = rng.normal(size=tree.n_nodes)
        duality_check(tree, alpha, beta, lab.domain.sigma, tree.roots[0])
    return True, "20 random coefficient pairs"


def _carleson_comparability(lab: Laboratory) -> Tuple[bool, str]:
    tree = CubeTree.from_grid(lab.grid)
    omega = lab.operator.elliptic_measure(lab.pole).values
    gamma = np.random.default_rng(1).uniform(size=tree.n_nodes)
    result = comparability_check(tree, gamma, lab.domain.sigma, omega, 0.5, 0.5, tree.roots[0])
    detail = f"ratio {result.ratio:.4f}" if result.certified else "instance not certified"
    return True, detail


def _perturbation_identity(lab: Laboratory) -> Tuple[bool, str]:
    domain = lab.domain
    field = CoefficientField.bump(domain, 0.2, domain.centers.mean(axis=0), 0.2)
    perturbed = lab.operator_for(field)
    data = domain.boundary_points[:, 0] ** 2
    residual = perturbation_identity_check(lab.operator, perturbed, data, lab.pole)
    gap = abs(residual.difference - residual.discrete) / max(abs(residual.difference), 1e-12)
    return gap <= 1e-6, (f"discrete gap {gap:.2e}, integral discrepancy "
                         f"{residual.discrepancy:.3%}")


def _rh_identity(lab: Laboratory) -> Tuple[bool, str]:
    omega = lab.operator.elliptic_measure(lab.pole).values
    constant = rh_constant(rn_density(omega, omega), omega, 2.0, lab.family).constant
    return abs(constant - 1.0) <= 1e-9, f"RH_2 = {constant:.12f}"


def _sfnt_support(lab: Laboratory) -> Tuple[bool, str]:
    root = lab.root_near(0.25)
    cones = ConeFamily(lab.regions, root)
    data = lab.domain.boundary_points[:, 0].copy()
    u = lab.operator.solve_dirichlet(data)
    outside = np.ones(lab.domain.n_boundary, dtype=bool)
    outside[root.members] = False
    S = cones.square_function(u, data)
    N = cones.nontangential_max(u)
    ok = not np.any(S[outside]) and not np.any(N[outside])
    constant = cme_functional(lab.operator, lab.family, np.ones(lab.domain.n_cells)).value
    return ok and constant == 0.0, f"S and N vanish off cube {root.id}; CME of a constant {constant}"


def _djk_upper(lab: Laboratory) -> Tuple[bool, str]:
    root = lab.root_near(0.5)
    family = lab.regions.depth_family(root, 1)
    nu = djk_nu(lab.operator, lab.regions, family, root)
    report = djk_bounds_check(nu, lab.regions, samples=30)
    ok = report.upper_constant <= 10.0 and report.theta >= 0.2
    return ok, f"upper {report.upper_constant:.3f}, theta {report.theta:.3f}"


CHECKS: List[InvariantCheck] = [
    InvariantCheck("dyadic_partition", "dyadic_grid", _dyadic_partition),
    InvariantCheck("dyadic_ball_sandwich", "dyadic_grid", _dyadic_sandwich),
    InvariantCheck("whitney_cover_overlap", "whitney_sawtooth", _whitney_cover),
    InvariantCheck("carleson_box_sandwich", "whitney_sawtooth", _box_sandwich),
    InvariantCheck("capacity_density", "elliptic_solver", _cdc, PLANAR),
    InvariantCheck("measure_total_mass", "elliptic_solver", _measure_mass),
    InvariantCheck("green_transpose", "elliptic_solver", _green_transpose, SMOOTH),
    InvariantCheck("green_size_bound", "elliptic_solver", _green_size, SMOOTH + ("3d",)),
    InvariantCheck("tent_duality", "carleson_machinery", _tent_duality, PLANAR),
    InvariantCheck("carleson_comparability", "carleson_machinery", _carleson_comparability, SMOOTH),
    InvariantCheck("perturbation_identity", "perturbation_weights", _perturbation_identity, SMOOTH),
    InvariantCheck("rh_identity", "perturbation_weights", _rh_identity, SMOOTH),
    InvariantCheck("sfnt_support", "sfnt_functionals", _sfnt_support, ("square",)),
    InvariantCheck("djk_upper_bound", "sfnt_functionals", _djk_upper, ("square",)),
]


# ---------------------------------------------------------------------- matrix

@dataclass
class VerificationMatrix:
    profiles: List[str]
    rows: Dict[str, Dict[str, Optional[bool]]]
    details: Dict[str, Dict[str, str]] = field(default_factory=dict)
    seconds: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(cell is not False for row in self.rows.values() for cell in row.values())

    def failures(self) -> List[Tuple[str, str]]:
        return [(name, profile) for name, row in self.rows.items()
                for profile, cell in row.items() if cell is False]

    def format(self) -> str:
        width = max(len(name) for name in self.rows) if self.rows else 10
        lines = [" " * width + "  " + "  ".join(f"{p:>9}" for p in self.profiles)]
        marks = {True: "pass", False: "FAIL", None: "-"}
        for name, row in self.rows.items():
            cells = "  ".join(f"{marks[row.get(p)]:>9}" for p in self.profiles)
            lines.append(f"{name:<{width}}  {cells}")
        return "\n".join(lines)


def verify_all(config: ConfigManager, profiles: Sequence[str] = ("square",),
               resolution: Optional[int] = None, registry: Optional[RunRegistry] = None,
               checks: Optional[Sequence[InvariantCheck]] = None) -> VerificationMatrix:
    """Run every applicable check on every profile; failures become ``False`` cells."""
    handler = get_error_handler()
    checks = list(checks) if checks is not None else CHECKS
    rows: Dict[str, Dict[str, Optional[bool]]] = {c.name: {} for c in checks}
    details: Dict[str, Dict[str, str]] = {c.name: {} for c in checks}
    seconds: Dict[str, float] = {}
    base_resolution = resolution or config.get_geometry_config().resolution

    for profile in profiles:
        if profile not in PROFILES:
            raise ValueError(f"Unknown profile '{profile}', expected one of {sorted(PROFILES)}")
        kind, dim = PROFILES[profile]
        res = min(base_resolution, CUBE_RESOLUTION_CAP) if dim == 3 else base_resolution
        started = time.perf_counter()
        try:
            lab = build_laboratory(config, kind=kind, resolution=res, dim=dim)
        except Exception as e:
            context = handler.handle_error(e, "build laboratory", domain=profile)
            for check in checks:
                rows[check.name][profile] = False if check.applies(profile) else None
                details[check.name][profile] = context.user_message
            continue

        for check in checks:
            if not check.applies(profile):
                rows[check.name][profile] = None
                continue
            try:
                ok, detail = check.run(lab)
            except Exception as e:
                context = handler.handle_error(e, f"verify {check.name}", domain=profile,
                                               invariant=check.name)
                ok, detail = False, context.user_message
            rows[check.name][profile] = bool(ok)
            details[check.name][profile] = detail
            logger.info(f"[{profile}] {check.name}: {'pass' if ok else 'FAIL'} ({detail})")
        seconds[profile] = time.perf_counter() - started

    matrix = VerificationMatrix(list(profiles), rows, details, seconds)
    if registry is not None:
        registry.record_verification(list(profiles), base_resolution, matrix.rows)
    logger.info(f"Verification {'passed' if matrix.passed else 'failed'} on {list(profiles)}")
    return matrix
