"""
Test suite for the elliptic measure laboratory.

Contains unit tests for the geometry, lattice, solver and measure layers and
integration tests for scenarios, verification and the command line.
"""
