"""
Finite cube trees over weighted atoms.

A tree is either read off a DyadicGrid (atoms are boundary faces, leaves are the
finest cubes) or generated synthetically for the dyadic measure checks.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.dyadic_grid import DyadicGrid
from core.error_handler import DyadicError


logger = logging.getLogger(__name__)


class CubeTree:
    """Nodes with parent links; every leaf owns a non-empty set of atoms."""

    def __init__(self, parent: Sequence[int], leaf_atoms: Dict[int, Sequence[int]], n_atoms: int,
                 scale_offset: Optional[Sequence[int]] = None):
        """
        Args:
            parent: Parent id per node (``-1`` for roots); parents precede children
            leaf_atoms: Atom ids owned by each leaf node
            n_atoms: Total number of atoms
            scale_offset: Generation per node (defaults to depth below its root)

        Raises:
            DyadicError: If the leaves do not partition the atoms
        """
        self.parent = np.asarray(parent, dtype=np.int64)
        self.n_nodes = len(self.parent)
        self.n_atoms = n_atoms
        self.children: List[List[int]] = [[] for _ in range(self.n_nodes)]
        for node, up in enumerate(self.parent):
            if up >= node:
                raise DyadicError(f"Node {node} appears before its parent {up}")
            if up >= 0:
                self.children[up].append(node)
        self.roots = [i for i in range(self.n_nodes) if self.parent[i] < 0]

        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.parent[node] >= 0:
                depth[node] = depth[self.parent[node]] + 1
        self.depth = depth if scale_offset is None else np.asarray(scale_offset, dtype=np.int64)

        self.leaf_of = np.full(n_atoms, -1, dtype=np.int64)
        for leaf, atoms in leaf_atoms.items():
            if self.children[leaf]:
                raise DyadicError(f"Node {leaf} owns atoms but has children")
            ids = np.asarray(atoms, dtype=np.int64)
            if np.any(self.leaf_of[ids] >= 0):
                raise DyadicError(f"Leaf {leaf} shares atoms with another leaf")
            self.leaf_of[ids] = leaf
        if np.any(self.leaf_of < 0):
            raise DyadicError(f"{int(np.sum(self.leaf_of < 0))} atoms belong to no leaf")

        # atoms of every node, filled bottom-up
        self.atoms: List[np.ndarray] = [np.zeros(0, dtype=np.int64)] * self.n_nodes
        order = np.argsort(self.leaf_of, kind="stable")
        bounds = np.searchsorted(self.leaf_of[order], np.arange(self.n_nodes + 1))
        for node in range(self.n_nodes):
            self.atoms[node] = order[bounds[node]:bounds[node + 1]]
        for node in reversed(range(self.n_nodes)):
            if self.children[node]:
                self.atoms[node] = np.sort(np.concatenate([self.atoms[c] for c in self.children[node]]))
        self._paths: Dict[int, List[int]] = {}

    # ------------------------------------------------------------------ factories

    @classmethod
    def from_grid(cls, grid: DyadicGrid) -> "CubeTree":
        """Tree of a dyadic grid; node ids equal cube ids."""
        leaves = {c.id: c.members for c in grid.cubes if not c.children}
        return cls([c.parent for c in grid.cubes], leaves, grid.n_points,
                   scale_offset=[c.k for c in grid.cubes])

    @classmethod
    def uniform(cls, branching: int, depth: int) -> "CubeTree":
        """Complete ``branching``-ary tree of the given depth with one atom per leaf."""
        parent = [-1]
        frontier = [0]
        for _ in range(depth):
            nxt = []
            for node in frontier:
                for _ in range(branching):
                    parent.append(node)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        leaves = {leaf: [i] for i, leaf in enumerate(frontier)}
        return cls(parent, leaves, len(frontier))

    @classmethod
    def random(cls, depth: int, max_children: int = 3, seed: int = 0,
               min_children: int = 1) -> "CubeTree":
        """Random tree where every node above ``depth`` has between ``min_children`` and ``max_children`` children."""
        rng = np.random.default_rng(seed)
        parent = [-1]
        frontier = [0]
        for _ in range(depth):
            nxt = []
            for node in frontier:
                for _ in range(int(rng.integers(min_children, max_children + 1))):
                    parent.append(node)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        leaves = {leaf: [i] for i, leaf in enumerate(frontier)}
        return cls(parent, leaves, len(frontier))

    # ------------------------------------------------------------------ structure

    @property
    def leaves(self) -> List[int]:
        return [i for i in range(self.n_nodes) if not self.children[i]]

    def descendants(self, node: int) -> List[int]:
        """``node`` and everything below it, parents first."""
        out = [node]
        index = 0
        while index < len(out):
            out.extend(self.children[out[index]])
            index += 1
        return out

    def is_descendant(self, node: int, ancestor: int) -> bool:
        while node >= 0:
            if node == ancestor:
                return True
            node = int(self.parent[node])
        return False

    def path(self, atom: int) -> List[int]:
        """Nodes containing ``atom``, root first."""
        leaf = int(self.leaf_of[atom])
        if leaf not in self._paths:
            nodes = []
            node = leaf
            while node >= 0:
                nodes.append(node)
                node = int(self.parent[node])
            self._paths[leaf] = nodes[::-1]
        return self._paths[leaf]

    def root_of(self, node: int) -> int:
        while self.parent[node] >= 0:
            node = int(self.parent[node])
        return node

    # ------------------------------------------------------------------ sums

    def mass(self, atom_weights: np.ndarray) -> np.ndarray:
        """Measure of every node from atom weights."""
        weights = np.asarray(atom_weights, dtype=float)
        total = np.bincount(self.leaf_of, weights=weights, minlength=self.n_nodes)
        for node in reversed(range(self.n_nodes)):
            if self.parent[node] >= 0:
                total[self.parent[node]] += total[node]
        return total

    def subtree_sums(self, values: np.ndarray) -> np.ndarray:
        """``S(Q) = sum of values over Q and all its descendants``."""
        total = np.array(values, dtype=float, copy=True)
        for node in reversed(range(self.n_nodes)):
            if self.parent[node] >= 0:
                total[self.parent[node]] += total[node]
        return total

    def summary(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "atoms": self.n_atoms,
            "roots": len(self.roots),
            "leaves": len(self.leaves),
            "depth": int(self.depth.max() - self.depth.min()),
        }

    def __repr__(self) -> str:
        return f"<CubeTree(nodes={self.n_nodes}, atoms={self.n_atoms})>"
