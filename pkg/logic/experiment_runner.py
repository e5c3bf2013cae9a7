"""
Scenario runner: builds a laboratory from configuration, sweeps a perturbation
parameter and writes a table, a JSON summary and a plot script.

Scenario kinds:
- identity: ``A = A0`` at every sweep point
- epsilon_sweep: smooth interior bump of amplitude ``eps`` on ``A0 = I``
- blend: ``A_t = (1 - t) A0 + t A`` for a fixed random ``A``
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from config.config_manager import ConfigManager
from core.coefficients import CoefficientField
from core.db_manager import RunRegistry
from core.domain import GridDomain
from core.dyadic_grid import DyadicCube, DyadicGrid
from core.elliptic_solver import EllipticOperator
from core.error_handler import ScenarioAssertionError
from core.grid_io import write_table
from core.sawtooth import WhitneyRegions
from core.whitney import WhitneyDecomposition
from logic.perturbation import (
    BallFamily,
    carleson_functional,
    conical_functional,
    disagreement,
    rh_constant,
    rn_density,
)
from logic.sfnt import cme_functional, random_boundary_data, s_vs_n


logger = logging.getLogger(__name__)

# profile -> (domain kind, dimension)
PROFILES = {
    "square": ("square", 2),
    "disk": ("disk", 2),
    "lipschitz": ("lipschitz", 2),
    "koch": ("koch", 2),
    "3d": ("cube", 3),
}
SCENARIO_KINDS = ("identity", "epsilon_sweep", "blend")
RESOLUTION_ENVELOPE = {2: (33, 257), 3: (17, 33)}
BLEND_ELLIPTICITY = 4.0
IDENTITY_RH_TOLERANCE = 1e-6
SMALL_EPS_RH_LIMIT = 1.05
QUADRATIC_R2 = 0.99

STATEMENTS = {
    "identity": "Equal operators have zero disagreement and identical elliptic measures.",
    "epsilon_sweep": "Small Carleson disagreement keeps omega in a reverse Hoelder class of omega0, "
                     "with constants tending to 1 as the perturbation vanishes.",
    "blend": "Reverse Hoelder constants of omega_t vary continuously along the blend A_t.",
}
DIMENSION_NOTE = ("Two-dimensional lattice: the boundary has dimension 1, below the n >= 2 "
                  "setting of the perturbation theory; constants are reported, not certified.")

PLOT_SCRIPT = '''"""Plot the sweep table next to this script (requires matplotlib)."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

rows = list(csv.DictReader(open(Path(__file__).with_name("table.csv"))))
x = [float(r["parameter"]) for r in rows]
columns = [c for c in rows[0] if c != "parameter"]
fig, axes = plt.subplots(len(columns), 1, figsize=(6, 2.2 * len(columns)), sharex=True)
for axis, column in zip(axes, columns):
    axis.plot(x, [float(r[column]) for r in rows], marker="o")
    axis.set_ylabel(column)
axes[-1].set_xlabel("parameter")
fig.tight_layout()
fig.savefig(Path(__file__).with_name("table.png"))
'''


# ---------------------------------------------------------------------- laboratory

@dataclass
class Laboratory:
    """Domain, lattices, ball family and the base operator of one run."""
    domain: GridDomain
    grid: DyadicGrid
    whitney: WhitneyDecomposition
    regions: WhitneyRegions
    family: BallFamily
    operator: EllipticOperator

    @property
    def top(self) -> DyadicCube:
        return self.grid.cubes[0]

    @property
    def pole(self) -> np.ndarray:
        return self.grid.corkscrew(self.top.id).point

    def root_near(self, length: float) -> DyadicCube:
        """Cube of side closest to ``length`` whose centre is nearest the domain centre."""
        k = int(np.clip(np.rint(-np.log2(length)), self.grid.k_min, self.grid.k_max))
        middle = self.domain.centers.mean(axis=0)
        return min(self.grid.cubes_at(k), key=lambda c: float(np.linalg.norm(c.x - middle)))

    def operator_for(self, field: CoefficientField) -> EllipticOperator:
        base = self.operator
        return EllipticOperator(
            self.domain, field, tolerance=base.tolerance, direct_limit=base.direct_limit,
            krylov=base.krylov, max_iterations=base.max_iterations,
            max_ellipticity=base.max_ellipticity,
            pole_clearance_cells=int(round(base.pole_clearance / self.domain.h)), threads=1,
        )


def build_laboratory(config: ConfigManager, kind: Optional[str] = None,
                     resolution: Optional[int] = None, dim: Optional[int] = None,
                     field: Optional[CoefficientField] = None, threads: int = 1) -> Laboratory:
    """Everything one scenario needs, from the geometry, lattice and solver sections."""
    geometry = config.get_geometry_config()
    dyadic = config.get_dyadic_config()
    whitney_cfg = config.get_whitney_config()
    perturbation = config.get_perturbation_config()

    domain = GridDomain.build(
        kind or geometry.kind, resolution or geometry.resolution, dim=dim or geometry.dim,
        slope=geometry.slope, depth=geometry.depth, disk_radius=geometry.disk_radius,
    )
    grid = DyadicGrid(domain, finest_scale_cells=dyadic.finest_scale_cells)
    whitney = WhitneyDecomposition(domain, ratio=whitney_cfg.whitney_ratio,
                                   fattening=whitney_cfg.fattening)
    regions = WhitneyRegions(grid, whitney, tuning_limit=whitney_cfg.tuning_limit,
                             strict=whitney_cfg.strict_tuning)
    family = BallFamily.from_grid(grid, per_octave=perturbation.radii_per_octave)
    operator = EllipticOperator.from_config(
        domain, field if field is not None else CoefficientField.identity(domain),
        config.get_solver_config(), threads=threads,
    )
    return Laboratory(domain, grid, whitney, regions, family, operator)


# ---------------------------------------------------------------------- scenario

@dataclass
class Scenario:
    kind: str
    profile: str
    resolution: int
    dim: int
    seed: int
    sweep: List[float]
    rh_exponents: List[float]
    bump_center: List[float]
    bump_radius: float
    cone_aperture: float
    q: float
    samples: int
    betas: List[float]
    gammas: List[float]
    rh_jump_threshold: float
    out_dir: str

    @classmethod
    def from_config(cls, config: ConfigManager) -> "Scenario":
        lab = config.get_lab_config()
        geometry = config.get_geometry_config()
        perturbation = config.get_perturbation_config()
        sfnt = config.get_sfnt_config()
        experiment = config.get_experiment_config()
        return cls(
            kind=experiment.kind, profile=lab.profile, resolution=geometry.resolution,
            dim=geometry.dim, seed=lab.seed, sweep=[float(v) for v in experiment.sweep],
            rh_exponents=[float(p) for p in perturbation.rh_exponents],
            bump_center=[float(c) for c in perturbation.bump_center],
            bump_radius=perturbation.bump_radius, cone_aperture=perturbation.cone_aperture,
            q=sfnt.q, samples=sfnt.samples, betas=list(sfnt.beta_values),
            gammas=list(sfnt.gamma_values), rh_jump_threshold=experiment.rh_jump_threshold,
            out_dir=experiment.out_dir,
        )

    def validate(self) -> None:
        """
        Raises:
            ValueError: If the kind, sweep or resolution is unsupported
        """
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"Unknown scenario kind '{self.kind}', expected one of {SCENARIO_KINDS}")
        if not self.sweep:
            raise ValueError("Scenario sweep is empty")
        if self.kind == "blend" and not all(0.0 <= t <= 1.0 for t in self.sweep):
            raise ValueError("Blend sweep values must lie in [0, 1]")
        low, high = RESOLUTION_ENVELOPE.get(self.dim, (0, -1))
        if not low <= self.resolution <= high:
            raise ValueError(
                f"Resolution {self.resolution} outside the supported range [{low}, {high}] "
                f"for dimension {self.dim}"
            )
        if 2.0 not in self.rh_exponents:
            self.rh_exponents = sorted(self.rh_exponents + [2.0])


@dataclass
class ScenarioResult:
    scenario: Scenario
    rows: List[Dict[str, float]]
    invariants: Dict[str, bool]
    details: Dict[str, str]
    table_path: Path
    summary_path: Path
    plot_path: Path
    run_id: Optional[str] = None

    @property
    def passed(self) -> bool:
        return all(self.invariants.values())

    @property
    def first_failure(self) -> Optional[str]:
        return next((name for name, ok in self.invariants.items() if not ok), None)

    def raise_for_failure(self) -> None:
        """
        Raises:
            ScenarioAssertionError: Naming the first violated invariant
        """
        name = self.first_failure
        if name is not None:
            raise ScenarioAssertionError(name, self.details.get(name, "invariant violated"))


class ExperimentRunner:
    """Runs one configured scenario end to end."""

    def __init__(self, config: ConfigManager, registry: Optional[RunRegistry] = None):
        self.config = config
        self.registry = registry
        self.scenario = Scenario.from_config(config)
        self.scenario.validate()
        self.workers = config.worker_count()
        self._far_field: Optional[CoefficientField] = None

    def perturbed_field(self, lab: Laboratory, parameter: float) -> CoefficientField:
        scenario = self.scenario
        base = lab.operator.field
        if scenario.kind == "identity":
            return base
        if scenario.kind == "epsilon_sweep":
            centre = (scenario.bump_center + [0.5] * lab.domain.dim)[: lab.domain.dim]
            return CoefficientField.bump(lab.domain, parameter, centre, scenario.bump_radius, base=base)
        if self._far_field is None:
            self._far_field = CoefficientField.random(lab.domain, BLEND_ELLIPTICITY, seed=scenario.seed)
        return base.blend(self._far_field, parameter)

    def evaluate_point(self, lab: Laboratory, parameter: float) -> Dict[str, float]:
        """Every tabulated functional at one sweep value."""
        scenario = self.scenario
        domain = lab.domain
        field = self.perturbed_field(lab, parameter)
        operator = lab.operator if field is lab.operator.field else lab.operator_for(field)

        rho = disagreement(field, lab.operator.field)
        carleson = carleson_functional(lab.operator, rho, lab.family)
        omega0 = lab.operator.elliptic_measure(lab.pole)
        omega = operator.elliptic_measure(lab.pole)
        conical = conical_functional(rho, domain, scenario.cone_aperture, omega=omega0)
        density = rn_density(omega.values, omega0.values)

        row: Dict[str, float] = {
            "parameter": float(parameter),
            "carleson": carleson.value,
            "carleson_sigma": carleson.sigma_value,
            "conical_sup": conical.omega_sup,
        }
        for p in scenario.rh_exponents:
            row[f"rh_{p:g}"] = rh_constant(density, omega0.values, p, lab.family).constant

        side = (domain.boundary_points[:, 0] < 0.5).astype(float)
        row["cme"] = cme_functional(operator, lab.family, operator.solve_dirichlet(side), side).normalized
        data = random_boundary_data(domain, scenario.samples, seed=scenario.seed)
        row["s_vs_n"] = s_vs_n(operator, lab.regions, lab.top, data, q=scenario.q,
                               betas=scenario.betas, gammas=scenario.gammas).constant
        logger.info(f"Sweep point {parameter:g}: carleson={row['carleson']:.4e}, "
                    f"RH_2={row['rh_2']:.6f}")
        return row

    # ------------------------------------------------------------------ invariants

    def check_invariants(self, rows: List[Dict[str, float]]) -> Dict[str, tuple]:
        """Invariant name -> (passed, detail)."""
        scenario = self.scenario
        checks: Dict[str, tuple] = {}
        finite = all(np.isfinite(r["cme"]) and np.isfinite(r["s_vs_n"]) for r in rows)
        checks["finite_sfnt_constants"] = (finite, "CME and S<=N constants finite")

        rh_columns = [f"rh_{p:g}" for p in scenario.rh_exponents]
        if scenario.kind == "identity":
            zero = all(r["carleson"] == 0 and r["carleson_sigma"] == 0 and r["conical_sup"] == 0
                       for r in rows)
            checks["identity_zero_disagreement"] = (zero, "disagreement functionals vanish")
            worst = max(abs(r[c] - 1.0) for r in rows for c in rh_columns)
            checks["identity_rh_one"] = (worst <= IDENTITY_RH_TOLERANCE,
                                         f"largest |RH - 1| = {worst:.3e}")
        elif scenario.kind == "epsilon_sweep":
            ordered = sorted(rows, key=lambda r: r["parameter"])
            eps2 = np.array([r["parameter"] ** 2 for r in ordered])
            values = np.array([r["carleson"] for r in ordered])
            slope = float(eps2 @ values / (eps2 @ eps2))
            total = float(np.sum((values - values.mean()) ** 2))
            r2 = 1.0 - float(np.sum((values - slope * eps2) ** 2)) / total if total > 0 else 1.0
            checks["carleson_quadratic_in_eps"] = (r2 >= QUADRATIC_R2, f"R^2 = {r2:.5f}")
            rh2 = [r["rh_2"] for r in ordered]
            monotone = all(b >= a - 1e-9 for a, b in zip(rh2, rh2[1:]))
            checks["rh2_monotone_in_eps"] = (monotone, f"RH_2 along sweep {np.round(rh2, 6).tolist()}")
            checks["rh2_small_eps"] = (rh2[0] <= SMALL_EPS_RH_LIMIT,
                                       f"RH_2 at eps={ordered[0]['parameter']:g} is {rh2[0]:.6f}")
        else:
            ordered = sorted(rows, key=lambda r: r["parameter"])
            jumps = [abs(b[c] - a[c]) for a, b in zip(ordered, ordered[1:]) for c in rh_columns]
            largest = max(jumps, default=0.0)
            checks["rh_continuous_in_t"] = (largest <= scenario.rh_jump_threshold,
                                            f"largest adjacent jump {largest:.4f}")
        return checks

    # ------------------------------------------------------------------ run

    def run(self, out_dir: Optional[Path] = None) -> ScenarioResult:
        scenario = self.scenario
        out = Path(out_dir) if out_dir else self.config.expand_path(scenario.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        run_id = None
        if self.registry is not None:
            run_id = self.registry.record_run(scenario.kind, scenario.profile, scenario.resolution,
                                              scenario.seed, self.config.as_dict(), str(out))

        lab = build_laboratory(self.config, resolution=scenario.resolution, dim=scenario.dim)
        logger.info(f"Scenario '{scenario.kind}' on '{lab.domain.name}': {len(scenario.sweep)} points")
        if self.workers > 1 and len(scenario.sweep) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                rows = list(pool.map(lambda t: self.evaluate_point(lab, t), scenario.sweep))
        else:
            rows = [self.evaluate_point(lab, t) for t in scenario.sweep]

        checks = self.check_invariants(rows)
        invariants = {name: bool(ok) for name, (ok, _) in checks.items()}
        details = {name: detail for name, (_, detail) in checks.items()}

        table_path = write_table(out / "table.csv", rows)
        summary = {
            "scenario": scenario.kind,
            "statement": STATEMENTS[scenario.kind],
            "profile": scenario.profile,
            "domain": lab.domain.name,
            "resolution": scenario.resolution,
            "dimension": scenario.dim,
            "seed": scenario.seed,
            "note": DIMENSION_NOTE if scenario.dim == 2 else None,
            "sweep": scenario.sweep,
            "invariants": invariants,
            "details": details,
            "passed": all(invariants.values()),
            "rows": rows,
        }
        summary_path = out / "summary.json"
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        plot_path = out / "plot_table.py"
        plot_path.write_text(PLOT_SCRIPT)

        if self.registry is not None and run_id is not None:
            for position, row in enumerate(rows):
                self.registry.record_sweep_point(run_id, position, row["parameter"], {
                    **row, "rh": {k: v for k, v in row.items() if k.startswith("rh_")},
                })
            self.registry.finish_run(run_id, invariants, details)

        result = ScenarioResult(scenario, rows, invariants, details, table_path, summary_path,
                                plot_path, run_id)
        if result.passed:
            logger.info(f"Scenario '{scenario.kind}' passed; outputs in {out}")
        else:
            logger.error(f"Scenario '{scenario.kind}' failed invariant '{result.first_failure}'")
        return result


def run_scenario(config: ConfigManager, registry: Optional[RunRegistry] = None,
                 out_dir: Optional[Path] = None) -> ScenarioResult:
    return ExperimentRunner(config, registry).run(out_dir)


def scenario_summary(result: ScenarioResult) -> Dict[str, Any]:
    return {"kind": result.scenario.kind, "passed": result.passed,
            "first_failure": result.first_failure, "table": str(result.table_path),
            "summary": str(result.summary_path), "run_id": result.run_id}
