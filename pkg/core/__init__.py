"""
Core module for the elliptic measure laboratory.

This module contains the core functionality including:
- Lattice domains and geometric queries
- Dyadic boundary cubes, Whitney cubes and sawtooth regions
- Coefficient fields and the finite-volume elliptic solver
- Capacity and random-walk oracles
- Run registry and portable dumps
"""

__version__ = "0.1.0"

from core.domain import GridDomain
from core.dyadic_grid import DyadicCube, DyadicGrid
from core.whitney import WhitneyDecomposition
from core.sawtooth import WhitneyRegions
from core.coefficients import CoefficientField
from core.elliptic_solver import EllipticMeasure, EllipticOperator
from core.cube_tree import CubeTree
from core.error_handler import LabError, get_error_handler

__all__ = [
    'GridDomain',
    'DyadicCube',
    'DyadicGrid',
    'WhitneyDecomposition',
    'WhitneyRegions',
    'CoefficientField',
    'EllipticMeasure',
    'EllipticOperator',
    'CubeTree',
    'LabError',
    'get_error_handler',
]
