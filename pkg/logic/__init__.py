"""
Measure-theoretic layer of the elliptic measure laboratory.

Coordinates the core lattices and solver into the quantities under study:
Carleson norms on cube trees, harmonic-measure property sweeps, perturbation
functionals and reverse Hoelder constants, square and non-tangential maximal
functions, scenario sweeps and the verification matrix.
"""

from logic.carleson import carleson_norm, duality_check, comparability_check
from logic.perturbation import BallFamily, carleson_functional, disagreement, rh_constant
from logic.sfnt import ConeFamily, cme_functional, s_vs_n, djk_nu
from logic.experiment_runner import ExperimentRunner, Laboratory, build_laboratory, run_scenario
from logic.verification import verify_all

__all__ = [
    'carleson_norm',
    'duality_check',
    'comparability_check',
    'BallFamily',
    'carleson_functional',
    'disagreement',
    'rh_constant',
    'ConeFamily',
    'cme_functional',
    's_vs_n',
    'djk_nu',
    'ExperimentRunner',
    'Laboratory',
    'build_laboratory',
    'run_scenario',
    'verify_all',
]
