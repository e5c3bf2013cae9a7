"""elab command line entry point.

Builds domains, lattices and operators from configuration and runs the
individual laboratory stages or whole scenarios.
"""

import sys
import json
import argparse
import logging
import logging.handlers
from pathlib import Path
from typing import Any, List, Optional

import numpy as np

# Import configuration
from config.config_manager import ConfigManager, parse_assignments

# Import core components
from core.capacity import cdc_profile
from core.coefficients import CoefficientField
from core.cube_tree import CubeTree
from core.db_manager import RunRegistry
from core.domain import GridDomain
from core.error_handler import LabError, MeasureError, get_error_handler
from core.grid_io import dump_cubes, dump_grid, write_bundle, write_values
from core.random_walk import walk_on_spheres

# Import logic layer
from logic.carleson import comparability_check, duality_check
from logic.experiment_runner import PROFILES, build_laboratory, run_scenario, scenario_summary
from logic.measure_checks import (
    bourgain_sweep,
    cfms_sweep,
    change_of_pole_sweep,
    doubling_sweep,
    green_size_sweep,
)
from logic.perturbation import (
    ainfty_report,
    carleson_functional,
    composition_pipeline,
    conical_functional,
    disagreement,
    fubini_link,
    rh_sweep,
    rn_density,
)
from logic.sfnt import (
    ConeFamily,
    cme_functional,
    djk_bounds_check,
    djk_nu,
    nontangential_data_check,
    random_boundary_data,
    s_vs_n,
)
from logic.verification import verify_all


COMMANDS = ('grid', 'sawtooth', 'measure', 'capacity', 'carleson', 'carlesonnorm', 'rhq',
            'sfnt', 'djk', 'experiment', 'verify', 'runs')


# Configure logging
def setup_logging(log_level: str, log_path: Path, max_bytes: int = 10485760, backup_count: int = 5):
    """
    Configure lab logging.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_path: Path to log file
        max_bytes: Size at which the log file rotates
        backup_count: Number of rotated files kept
    """
    log_path.parent.mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.handlers.RotatingFileHandler(
                log_path, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8'
            ),
            logging.StreamHandler(sys.stderr)
        ],
        force=True,
    )

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging initialized at level {log_level}, file {log_path}")


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Returns:
        Parsed arguments namespace
    """
    parser = argparse.ArgumentParser(
        prog='elab',
        description='elab - numerical laboratory for elliptic measure under coefficient perturbation',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Dyadic lattice of the Koch domain, with dumps
  elab grid --profile koch --resolution 129 --out ./out

  # Elliptic measure from the default pole, checked against random walks
  elab measure --walks 20000

  # Epsilon sweep of an interior bump, recorded in the run registry
  elab experiment --set experiment.kind=epsilon_sweep --out ./sweep

  # Pass/fail matrix over several test domains
  elab verify --profiles square koch 3d

  # Scenario file in flat key = value form
  elab experiment --config scenario.txt --seed 7
        """
    )

    parser.add_argument('command', choices=COMMANDS, help='Stage to run')
    parser.add_argument(
        '--config', type=str, default=None, metavar='PATH',
        help='Scenario file (YAML or flat section.key = value lines)'
    )
    parser.add_argument('--seed', type=int, default=None, help='Override lab.seed')
    parser.add_argument('--resolution', type=int, default=None, help='Override geometry.resolution')
    parser.add_argument('--out', type=str, default=None, metavar='DIR', help='Output directory')
    parser.add_argument(
        '--profile', type=str, default=None, choices=sorted(PROFILES),
        help='Test domain profile'
    )
    parser.add_argument(
        '--set', action='append', default=None, metavar='SECTION.KEY=VALUE',
        help='Configuration override (repeatable)'
    )
    parser.add_argument(
        '--log-level', type=str, default=None,
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        help='Override logging level from config'
    )

    stage = parser.add_argument_group('stage options')
    stage.add_argument('--pole', type=str, default=None, metavar='X,Y',
                       help='Pole for measure/Green computations (default: top corkscrew)')
    stage.add_argument('--walks', type=int, default=0,
                       help='measure: walk-on-spheres walkers for the A = I oracle')
    stage.add_argument('--sweeps', action='store_true',
                       help='measure: run the harmonic-measure property sweeps')
    stage.add_argument('--eps', type=float, default=0.1, help='Bump amplitude for single-field stages')
    stage.add_argument('--depth', type=int, default=1, help='Sawtooth family depth below the root')
    stage.add_argument('--root-length', type=float, default=0.5,
                       help='Side length of the root cube used by sawtooth/sfnt/djk')
    stage.add_argument('--trials', type=int, default=1000, help='carleson: randomized instances')
    stage.add_argument('--profiles', nargs='+', default=None, help='verify: profiles to run')
    stage.add_argument('--limit', type=int, default=20, help='runs: number of runs listed')

    return parser.parse_args(argv)


def build_config(args: argparse.Namespace) -> ConfigManager:
    """Merge scenario file, shorthand flags and --set overrides."""
    config_manager = ConfigManager(scenario_path=Path(args.config) if args.config else None)
    assignments = parse_assignments(args.set)
    if args.seed is not None:
        assignments.append(f"lab.seed={args.seed}")
    if args.resolution is not None:
        assignments.append(f"geometry.resolution={args.resolution}")
    if args.profile is not None:
        kind, dim = PROFILES[args.profile]
        assignments += [f"lab.profile={args.profile}", f"geometry.kind={kind}", f"geometry.dim={dim}"]
    if args.out is not None:
        assignments.append(f"experiment.out_dir={args.out}")
    config_manager.apply_overrides(assignments)
    return config_manager


def emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=_plain))


def _plain(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


def _pole(args: argparse.Namespace, lab) -> np.ndarray:
    if args.pole:
        return np.array([float(v) for v in args.pole.split(',')])
    return lab.pole


def _out_dir(config_manager: ConfigManager) -> Path:
    out = config_manager.expand_path(config_manager.get_experiment_config().out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bump(config_manager: ConfigManager, lab, eps: float) -> CoefficientField:
    perturbation = config_manager.get_perturbation_config()
    centre = (list(perturbation.bump_center) + [0.5] * lab.domain.dim)[: lab.domain.dim]
    return CoefficientField.bump(lab.domain, eps, centre, perturbation.bump_radius)


# ---------------------------------------------------------------------- commands

def cmd_grid(args, config_manager: ConfigManager) -> int:
    geometry = config_manager.get_geometry_config()
    lab = build_laboratory(config_manager, threads=config_manager.worker_count())
    thin = lab.grid.thin_boundary(config_manager.get_dyadic_config().thin_taus)
    out = _out_dir(config_manager)
    dump_grid(lab.domain, out / f"{geometry.kind}.grid")
    dump_cubes(lab.grid, out / f"{geometry.kind}.cubes")
    write_bundle(lab.grid, out / f"{geometry.kind}.cbor")
    emit({"domain": lab.domain.summary(), "grid": lab.grid.summary(),
          "thin_boundary": {"eta": thin.eta, "constant": thin.constant}})
    return 0


def cmd_sawtooth(args, config_manager: ConfigManager) -> int:
    lab = build_laboratory(config_manager)
    regions = lab.regions
    root = lab.root_near(args.root_length)
    family = regions.depth_family(root, args.depth)
    region = regions.sawtooth(family, root)
    samples = config_manager.get_whitney_config().cdc_samples
    corkscrew = regions.common_corkscrew(family, root)
    patches, overlap = regions.projection_patches(family, root)
    cells = np.zeros(lab.domain.n_cells)
    cells[region.cells] = 1.0
    write_values(_out_dir(config_manager) / "sawtooth_cells.csv", cells, header="inside")
    emit({"whitney": lab.whitney.summary(), "regions": regions.summary(), "root": root.id,
          "family": [c.id for c in family], "sawtooth_cells": int(region.cells.size),
          "sawtooth_cdc": regions.sawtooth_cdc(region, samples),
          "corkscrew": {"point": corkscrew.point, "ratio": corkscrew.ratio},
          "patches": len(patches), "patch_overlap": overlap})
    return 0


def cmd_measure(args, config_manager: ConfigManager) -> int:
    lab = build_laboratory(config_manager, threads=config_manager.worker_count())
    pole = _pole(args, lab)
    omega = lab.operator.elliptic_measure(pole)
    write_values(_out_dir(config_manager) / "omega.csv", omega.values, header="omega")
    report = {"pole": omega.pole, "mass": omega.mass}
    if args.walks > 0:
        walks = walk_on_spheres(lab.domain, omega.pole, n_walks=args.walks,
                                seed=config_manager.get_lab_config().seed)
        halves = lab.domain.boundary_points[:, 0] < omega.pole[0]
        faces = np.flatnonzero(halves)
        report["walk_oracle"] = {"solver": omega.of(faces), "walks": walks.of(faces),
                                 "standard_error": walks.standard_error(faces)}
    if args.sweeps:
        report["sweeps"] = [s.as_dict() for s in (
            bourgain_sweep(lab.operator, lab.grid),
            cfms_sweep(lab.operator, lab.grid),
            doubling_sweep(lab.operator, lab.grid, pole),
            change_of_pole_sweep(lab.operator, lab.grid, X=pole),
            green_size_sweep(lab.operator, seed=config_manager.get_lab_config().seed),
        )]
    emit(report)
    return 0


def cmd_capacity(args, config_manager: ConfigManager) -> int:
    geometry = config_manager.get_geometry_config()
    domain = GridDomain.build(geometry.kind, geometry.resolution, dim=geometry.dim,
                              slope=geometry.slope, depth=geometry.depth,
                              disk_radius=geometry.disk_radius)
    h = domain.h
    profile = cdc_profile(domain, domain.boundary_points, [4 * h, 8 * h, 16 * h], limit=50)
    emit({"domain": domain.name, "min_ratio": profile.ratio, "argmin_point": profile.argmin_point,
          "argmin_radius": profile.argmin_radius, "samples": profile.samples})
    return 0


def cmd_carleson(args, config_manager: ConfigManager) -> int:
    rng = np.random.default_rng(config_manager.get_lab_config().seed)
    violations = 0
    for trial in range(args.trials):
        tree = CubeTree.random(depth=4, max_children=3, seed=int(rng.integers(2 ** 31)))
        mu = rng.uniform(0.1, 1.0, size=tree.n_atoms)
        try:
            duality_check(tree, rng.normal(size=tree.n_nodes), rng.normal(size=tree.n_nodes),
                          mu, tree.roots[0])
        except MeasureError:
            violations += 1

    exhaustive = 0
    tree = CubeTree.uniform(2, 3)
    mu = np.ones(tree.n_atoms)
    for a in range(tree.n_nodes):
        for b in range(tree.n_nodes):
            alpha, beta = np.eye(tree.n_nodes)[a], np.eye(tree.n_nodes)[b]
            try:
                duality_check(tree, alpha, beta, mu, tree.roots[0])
            except MeasureError:
                violations += 1
            exhaustive += 1

    certified = comparability_violations = 0
    for _ in range(200):
        tree = CubeTree.random(depth=4, max_children=3, seed=int(rng.integers(2 ** 31)),
                               min_children=2)
        mu = rng.uniform(0.5, 1.5, size=tree.n_atoms)
        nu = mu * rng.uniform(0.8, 1.25, size=tree.n_atoms)
        gamma = rng.uniform(size=tree.n_nodes)
        try:
            certified += comparability_check(tree, gamma, mu, nu, 0.5, 0.5, tree.roots[0]).certified
        except MeasureError:
            comparability_violations += 1
    emit({"duality_trials": args.trials, "exhaustive_instances": exhaustive,
          "duality_violations": violations, "comparability_certified": certified,
          "comparability_violations": comparability_violations})
    return 0 if violations == 0 and comparability_violations == 0 else 1


def cmd_carlesonnorm(args, config_manager: ConfigManager) -> int:
    lab = build_laboratory(config_manager, threads=config_manager.worker_count())
    field = _bump(config_manager, lab, args.eps)
    rho = disagreement(field, lab.operator.field)
    report = carleson_functional(lab.operator, rho, lab.family)
    omega0 = lab.operator.elliptic_measure(lab.pole)
    conical = conical_functional(rho, lab.domain,
                                 config_manager.get_perturbation_config().cone_aperture, omega0)
    link = fubini_link(rho, lab.family, conical)
    write_values(_out_dir(config_manager) / "conical.csv", conical.values, header="conical")
    emit({**report.as_dict(), "conical_sigma_sup": conical.sigma_sup,
          "conical_omega_sup": conical.omega_sup, "fubini_worst_ratio": link.worst_ratio})
    return 0


def cmd_rhq(args, config_manager: ConfigManager) -> int:
    perturbation = config_manager.get_perturbation_config()
    lab = build_laboratory(config_manager, threads=config_manager.worker_count())
    pole = _pole(args, lab)
    operators = [lab.operator_for(_bump(config_manager, lab, eps)) for eps in perturbation.epsilons]
    rows = []
    for p in perturbation.rh_exponents:
        for eps, report in zip(perturbation.epsilons,
                               rh_sweep(lab.operator, operators, pole, lab.family, p,
                                        threads=config_manager.worker_count())):
            rows.append({"eps": eps, **report.as_dict()})
    omega0 = lab.operator.elliptic_measure(pole).values
    strongest = operators[-1].elliptic_measure(pole).values
    ainfty = ainfty_report(rn_density(strongest, omega0), omega0, perturbation.rh_exponents,
                           lab.family)
    composition = composition_pipeline(lab.operator, operators[-1], pole, lab.family)
    emit({"rh": rows, "ainfty": {"exponents": ainfty.exponents, "constants": ainfty.constants},
          "composition": composition.as_dict()})
    return 0


def cmd_sfnt(args, config_manager: ConfigManager) -> int:
    sfnt = config_manager.get_sfnt_config()
    seed = config_manager.get_lab_config().seed
    lab = build_laboratory(config_manager, threads=config_manager.worker_count())
    root = lab.root_near(args.root_length)
    data = random_boundary_data(lab.domain, sfnt.samples, seed=seed)
    cones = ConeFamily(lab.regions, root)
    u = lab.operator.solve_dirichlet(data[0])
    out = _out_dir(config_manager)
    write_values(out / "square_function.csv", cones.square_function(u, data[0]), header="S")
    write_values(out / "nontangential_max.csv", cones.nontangential_max(u), header="N")
    side = (lab.domain.boundary_points[:, 0] < 0.5).astype(float)
    cme = cme_functional(lab.operator, lab.family, lab.operator.solve_dirichlet(side), side)
    report = s_vs_n(lab.operator, lab.regions, root, data, q=sfnt.q, betas=sfnt.beta_values,
                    gammas=sfnt.gamma_values)
    bound = nontangential_data_check(lab.operator, lab.regions, root, samples=10, q=sfnt.q, seed=seed)
    emit({"cme": cme.as_dict(), "s_vs_n": report.as_dict(), "nt_data_constant": bound.constant})
    return 0


def cmd_djk(args, config_manager: ConfigManager) -> int:
    lab = build_laboratory(config_manager, threads=config_manager.worker_count())
    root = lab.root_near(args.root_length)
    family = lab.regions.depth_family(root, args.depth)
    nu = djk_nu(lab.operator, lab.regions, family, root)
    write_values(_out_dir(config_manager) / "nu.csv", nu.values, header="nu")
    report = djk_bounds_check(nu, lab.regions, samples=30, seed=config_manager.get_lab_config().seed)
    emit({"root": root.id, "family": nu.family, "patches": len(nu.patches), **report.as_dict()})
    return 0


def _registry(config_manager: ConfigManager) -> RunRegistry:
    registry = RunRegistry(config_manager.expand_path(config_manager.get_storage_config().db_path))
    registry.initialize_database()
    return registry


def cmd_experiment(args, config_manager: ConfigManager) -> int:
    result = run_scenario(config_manager, registry=_registry(config_manager))
    emit(scenario_summary(result))
    result.raise_for_failure()
    return 0


def cmd_verify(args, config_manager: ConfigManager) -> int:
    profiles = args.profiles or [config_manager.get_lab_config().profile]
    matrix = verify_all(config_manager, profiles=profiles, registry=_registry(config_manager))
    print(matrix.format())
    return 0 if matrix.passed else 1


def cmd_runs(args, config_manager: ConfigManager) -> int:
    runs = _registry(config_manager).list_runs(limit=args.limit)
    for run in runs:
        failure = f" ({run.failed_invariant})" if run.failed_invariant else ""
        print(f"{run.id}  {run.started_at:%Y-%m-%d %H:%M}  {run.kind:<14} {run.profile:<10} "
              f"res={run.resolution:<4} {run.status}{failure}")
    return 0


HANDLERS = {
    'grid': cmd_grid, 'sawtooth': cmd_sawtooth, 'measure': cmd_measure, 'capacity': cmd_capacity,
    'carleson': cmd_carleson, 'carlesonnorm': cmd_carlesonnorm, 'rhq': cmd_rhq, 'sfnt': cmd_sfnt,
    'djk': cmd_djk, 'experiment': cmd_experiment, 'verify': cmd_verify, 'runs': cmd_runs,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command line entry point.

    Returns:
        Process exit code: 0 on success, 1 when an invariant or stage fails, 2 on bad configuration
    """
    args = parse_arguments(argv)
    try:
        config_manager = build_config(args)
    except (ValueError, LabError) as e:
        print(f"elab: configuration error: {e}", file=sys.stderr)
        return 2

    logging_config = config_manager.get_logging_config()
    if args.log_level:
        logging_config.level = args.log_level
    setup_logging(logging_config.level, config_manager.expand_path(logging_config.log_path),
                  logging_config.max_log_size, logging_config.backup_count)

    logger = logging.getLogger(__name__)
    logger.info(f"elab {args.command} (profile {config_manager.get_lab_config().profile})")
    try:
        return HANDLERS[args.command](args, config_manager)
    except LabError as e:
        context = get_error_handler().handle_error(e, f"elab {args.command}",
                                                   domain=config_manager.get_geometry_config().kind,
                                                   invariant=getattr(e, 'invariant', None))
        print(f"elab: {context.user_message}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
