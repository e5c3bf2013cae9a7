"""
Dyadic Carleson machinery on cube trees.

Sequences ``gamma`` are indexed by node, measures ``mu``/``nu`` are given on
atoms and summed over nodes with ``CubeTree.mass``.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.cube_tree import CubeTree
from core.error_handler import DensityError, MeasureError


logger = logging.getLogger(__name__)

DUALITY_CONSTANT = 4.0
EXACT_SUBSET_LIMIT = 16
RELATIVE_SLACK = 1e-12


# ---------------------------------------------------------------------- tents

def _in_root(tree: CubeTree, root: int) -> np.ndarray:
    inside = np.zeros(tree.n_nodes, dtype=bool)
    inside[tree.descendants(root)] = True
    return inside


def tent_A(tree: CubeTree, gamma: np.ndarray, mu_mass: np.ndarray, root: int, atom: int,
           truncation: int = 0) -> float:
    """``sqrt(sum gamma_Q**2 / mu(Q))`` over cubes in ``D_root`` containing the atom and at least ``truncation`` levels below ``root``."""
    path = tree.path(atom)
    if root not in path:
        return 0.0
    top = tree.depth[root] + truncation
    total = sum(gamma[q] ** 2 / mu_mass[q] for q in path[path.index(root):] if tree.depth[q] >= top)
    return float(np.sqrt(total))


def tent_B(tree: CubeTree, gamma: np.ndarray, mu_mass: np.ndarray, root: int, atom: int) -> float:
    """``sup over Q containing the atom of sqrt(sum_{Q' in D_Q} gamma_Q'**2 / mu(Q))``."""
    path = tree.path(atom)
    if root not in path:
        return 0.0
    energy = tree.subtree_sums(np.asarray(gamma, dtype=float) ** 2)
    return float(max(np.sqrt(energy[q] / mu_mass[q]) for q in path[path.index(root):]))


def tent_A_all(tree: CubeTree, gamma: np.ndarray, mu_mass: np.ndarray, root: int,
               truncation: int = 0) -> np.ndarray:
    """``tent_A`` at every atom in one top-down pass (zero outside ``root``)."""
    inside = _in_root(tree, root)
    term = np.where(inside & (tree.depth >= tree.depth[root] + truncation),
                    np.asarray(gamma, float) ** 2 / np.where(inside, mu_mass, 1.0), 0.0)
    acc = term.copy()
    for node in tree.descendants(root)[1:]:
        acc[node] += acc[tree.parent[node]]
    values = np.zeros(tree.n_atoms)
    atoms = tree.atoms[root]
    values[atoms] = np.sqrt(acc[tree.leaf_of[atoms]])
    return values


def tent_B_all(tree: CubeTree, gamma: np.ndarray, mu_mass: np.ndarray, root: int) -> np.ndarray:
    """``tent_B`` at every atom in one top-down pass (zero outside ``root``)."""
    energy = tree.subtree_sums(np.asarray(gamma, dtype=float) ** 2)
    best = np.zeros(tree.n_nodes)
    for node in tree.descendants(root):
        local = np.sqrt(energy[node] / mu_mass[node])
        best[node] = local if node == root else max(local, best[tree.parent[node]])
    values = np.zeros(tree.n_atoms)
    atoms = tree.atoms[root]
    values[atoms] = best[tree.leaf_of[atoms]]
    return values


def duality_check(tree: CubeTree, alpha: np.ndarray, beta: np.ndarray, mu_atoms: np.ndarray,
                  root: int) -> Tuple[float, float]:
    """
    ``sum |alpha_Q beta_Q|`` against ``4 * integral of A(alpha) B(beta) dmu`` over ``root``.

    Raises:
        MeasureError: If the left side exceeds the right side
    """
    mu_mass = tree.mass(mu_atoms)
    nodes = tree.descendants(root)
    lhs = float(np.sum(np.abs(np.asarray(alpha)[nodes] * np.asarray(beta)[nodes])))
    integrand = tent_A_all(tree, alpha, mu_mass, root) * tent_B_all(tree, beta, mu_mass, root)
    rhs = DUALITY_CONSTANT * float(np.sum(integrand * mu_atoms))
    if lhs > rhs * (1 + RELATIVE_SLACK) + 1e-300:
        raise MeasureError(f"Tent duality fails: {lhs:.6e} > {rhs:.6e}")
    return lhs, rhs


# ---------------------------------------------------------------------- Carleson norms

def carleson_norm(tree: CubeTree, gamma: np.ndarray, mu_mass: np.ndarray, root: int) -> float:
    """``sup over Q in D_root of (sum_{Q' in D_Q} gamma_Q') / mu(Q)``."""
    sums = tree.subtree_sums(gamma)
    nodes = tree.descendants(root)
    return float(np.max(sums[nodes] / mu_mass[nodes]))


def sawtooth_nodes(tree: CubeTree, family: Sequence[int], root: int) -> List[int]:
    """
    ``D_{F,root}``: nodes under ``root`` not contained in a member of ``family``.

    Raises:
        MeasureError: If the family is not pairwise disjoint inside ``root``
    """
    members = set(int(f) for f in family)
    for f in members:
        if not tree.is_descendant(f, root):
            raise MeasureError(f"Family member {f} is not below node {root}")
        up = int(tree.parent[f])
        while up >= 0:
            if up in members:
                raise MeasureError(f"Family members {up} and {f} are nested")
            up = int(tree.parent[up])
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node in members:
            continue
        out.append(node)
        stack.extend(tree.children[node])
    return sorted(out)


def restrict(tree: CubeTree, gamma: np.ndarray, family: Sequence[int], root: int) -> np.ndarray:
    """``gamma_F``: ``gamma`` on ``D_{F,root}`` and zero elsewhere."""
    restricted = np.zeros(tree.n_nodes)
    keep = sawtooth_nodes(tree, family, root)
    restricted[keep] = np.asarray(gamma, dtype=float)[keep]
    return restricted


def carleson_norm_restricted(tree: CubeTree, gamma: np.ndarray, family: Sequence[int],
                             mu_mass: np.ndarray, root: int) -> float:
    return carleson_norm(tree, restrict(tree, gamma, family, root), mu_mass, root)


def weighted_carleson_norm(tree: CubeTree, gamma: np.ndarray, mass: np.ndarray, root: int) -> float:
    """``sup over Q of (1/m(Q)) sum_{Q' in D_Q} gamma_Q' m(Q')``."""
    return carleson_norm(tree, np.asarray(gamma, float) * mass, mass, root)


# ---------------------------------------------------------------------- stopping and projection

def stopping_family(tree: CubeTree, mu_mass: np.ndarray, nu_mass: np.ndarray, root: int,
                    alpha: float) -> List[int]:
    """Maximal nodes below ``root`` with ``nu/mu > (1 - alpha)**-1 nu(root)/mu(root)``."""
    threshold = nu_mass[root] / mu_mass[root] / (1.0 - alpha)
    family = []
    stack = list(reversed(tree.children[root]))
    while stack:
        node = stack.pop()
        if nu_mass[node] > threshold * mu_mass[node]:
            family.append(node)
        else:
            stack.extend(reversed(tree.children[node]))
    return sorted(family)


def project_measure(tree: CubeTree, family: Sequence[int], mu_atoms: np.ndarray,
                    nu_atoms: np.ndarray) -> np.ndarray:
    """Replace ``nu`` inside each family member by ``mu`` rescaled to the member's ``nu`` mass."""
    projected = np.array(nu_atoms, dtype=float, copy=True)
    for node in family:
        atoms = tree.atoms[node]
        mu_q = float(np.sum(mu_atoms[atoms]))
        if mu_q <= 0:
            raise DensityError(f"Node {node} has zero mu mass")
        projected[atoms] = mu_atoms[atoms] / mu_q * float(np.sum(nu_atoms[atoms]))
    return projected


def doubling_constant(tree: CubeTree, mass: np.ndarray, root: Optional[int] = None) -> float:
    """Largest ``m(parent) / m(child)`` under ``root`` (all roots by default)."""
    nodes = tree.descendants(root) if root is not None else range(tree.n_nodes)
    worst = 1.0
    for node in nodes:
        up = tree.parent[node]
        if up < 0 or node == root:
            continue
        worst = max(worst, mass[up] / mass[node] if mass[node] > 0 else np.inf)
    return float(worst)


# ---------------------------------------------------------------------- A_infinity

@dataclass
class AInftyCurve:
    """Smallest ``nu(F)/nu(Q)`` over ``F`` in ``Q`` with ``mu(F)/mu(Q) > alpha``."""
    alphas: np.ndarray
    betas: np.ndarray
    cubes: List[int]
    witnesses: List[np.ndarray] = field(default_factory=list)
    method: str = "auto"

    def holds(self, alpha: float, beta: float) -> bool:
        index = int(np.argmin(np.abs(self.alphas - alpha)))
        if abs(self.alphas[index] - alpha) > 1e-12:
            raise ValueError(f"alpha {alpha} is not on the curve")
        return bool(self.betas[index] >= beta)


def _subset_sums(weights: np.ndarray) -> np.ndarray:
    sums = np.zeros(1)
    for w in weights:
        sums = np.concatenate([sums, sums + w])
    return sums


def _cube_curve(mf: np.ndarray, vf: np.ndarray, alphas: np.ndarray, method: str):
    """Per-cube ``beta(alpha)`` and witness atom positions."""
    n = mf.size
    betas = np.ones(len(alphas))
    witnesses: List[np.ndarray] = [np.arange(n)] * len(alphas)
    if method == "exact":
        mu_sums, nu_sums = _subset_sums(mf), _subset_sums(vf)
        for i, a in enumerate(alphas):
            allowed = np.flatnonzero(mu_sums > a + RELATIVE_SLACK)
            if allowed.size == 0:
                continue
            best = allowed[np.argmin(nu_sums[allowed])]
            betas[i] = nu_sums[best]
            # bit j of the subset index selects atom j (last atom is the most significant bit)
            witnesses[i] = np.flatnonzero((best >> np.arange(n)) & 1)
        return betas, witnesses

    with np.errstate(divide="ignore", invalid="ignore"):
        density = np.where(mf > 0, vf / np.where(mf > 0, mf, 1.0), np.where(vf > 0, np.inf, 0.0))
    order = np.argsort(density, kind="stable")
    cum_mu = np.cumsum(mf[order])
    cum_nu = np.cumsum(vf[order])
    for i, a in enumerate(alphas):
        if method == "prefix":
            stop = int(np.searchsorted(cum_mu, a + RELATIVE_SLACK, side="right"))
            stop = min(stop, n - 1)
            betas[i] = cum_nu[stop]
            witnesses[i] = order[:stop + 1]
        else:
            stop = int(np.searchsorted(cum_mu, a, side="left"))
            stop = min(stop, n - 1)
            before_mu = cum_mu[stop - 1] if stop > 0 else 0.0
            before_nu = cum_nu[stop - 1] if stop > 0 else 0.0
            share = (a - before_mu) / mf[order[stop]] if mf[order[stop]] > 0 else 0.0
            betas[i] = before_nu + max(share, 0.0) * vf[order[stop]]
            witnesses[i] = order[:stop + 1]
    return betas, witnesses


def ainfty_curve(tree: CubeTree, mu_atoms: np.ndarray, nu_atoms: np.ndarray,
                 alphas: Sequence[float], root: Optional[int] = None,
                 method: str = "auto") -> AInftyCurve:
    """
    ``beta(alpha)`` over every cube under ``root``.

    ``method`` is ``exact`` (all atom subsets), ``prefix`` (density-sorted
    prefixes), ``fractional`` (lower envelope allowing a split atom) or
    ``auto`` (exact up to 16 atoms per cube, fractional above).

    Raises:
        DensityError: If a cube has zero ``mu`` or ``nu`` mass
    """
    if method not in ("auto", "exact", "prefix", "fractional"):
        raise ValueError(f"Unknown A_infinity method '{method}'")
    grid = np.asarray(alphas, dtype=float)
    mu_mass, nu_mass = tree.mass(mu_atoms), tree.mass(nu_atoms)
    nodes = tree.descendants(root) if root is not None else list(range(tree.n_nodes))
    betas = np.full(len(grid), np.inf)
    cubes = [-1] * len(grid)
    witnesses: List[np.ndarray] = [np.zeros(0, dtype=np.int64)] * len(grid)
    for node in nodes:
        if mu_mass[node] <= 0 or nu_mass[node] <= 0:
            raise DensityError(f"Cube {node} has zero mass (mu={mu_mass[node]}, nu={nu_mass[node]})")
        atoms = tree.atoms[node]
        local = method
        if method == "auto":
            local = "exact" if atoms.size <= EXACT_SUBSET_LIMIT else "fractional"
        b, w = _cube_curve(mu_atoms[atoms] / mu_mass[node], nu_atoms[atoms] / nu_mass[node], grid, local)
        for i in range(len(grid)):
            if b[i] < betas[i]:
                betas[i], cubes[i], witnesses[i] = b[i], node, atoms[w[i]]
    curve = AInftyCurve(alphas=grid, betas=betas, cubes=cubes, witnesses=witnesses, method=method)
    logger.debug(f"A_infinity curve over {len(nodes)} cubes: {np.round(betas, 4).tolist()}")
    return curve


# ---------------------------------------------------------------------- comparability

@dataclass
class ComparabilityResult:
    lower: float
    ratio: float
    upper: float
    certified: bool
    mu_norm: float = 0.0
    nu_norm: float = 0.0
    witness_cube: int = -1


def comparability_check(tree: CubeTree, gamma: np.ndarray, mu_atoms: np.ndarray,
                        nu_atoms: np.ndarray, alpha: float, beta: float,
                        root: int) -> ComparabilityResult:
    """
    Compare the ``mu``- and ``nu``-weighted Carleson norms of ``gamma``.

    Instances failing the ``(alpha, beta)`` hypothesis are reported uncertified.

    Raises:
        MeasureError: If a certified instance breaks the bounds
    """
    lower = (1.0 - alpha) * beta
    upper = 1.0 / lower
    curve = ainfty_curve(tree, mu_atoms, nu_atoms, [alpha], root=root)
    if curve.betas[0] < beta:
        logger.debug(f"Comparability skipped: beta({alpha})={curve.betas[0]:.4f} < {beta}")
        return ComparabilityResult(lower, np.nan, upper, certified=False, witness_cube=curve.cubes[0])

    mu_norm = weighted_carleson_norm(tree, gamma, tree.mass(mu_atoms), root)
    nu_norm = weighted_carleson_norm(tree, gamma, tree.mass(nu_atoms), root)
    ratio = nu_norm / mu_norm if mu_norm > 0 else 1.0
    if not lower * (1 - RELATIVE_SLACK) <= ratio <= upper * (1 + RELATIVE_SLACK):
        raise MeasureError(f"Carleson comparability ratio {ratio:.6f} outside [{lower:.4f}, {upper:.4f}]")
    return ComparabilityResult(lower, float(ratio), upper, certified=True,
                               mu_norm=mu_norm, nu_norm=nu_norm)
