"""Mesh container shared by all stages.

Nodes live in one ``(N, 2)`` array.  Elements keep their node ids in the
internal ordering of :mod:`strake.lagrange`.  Boundary patches are stored
as edge node sequences (``P + 1`` ids, start vertex to end vertex).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import lagrange

WALL_PREFIX = "wall"


def is_wall_patch(name: str) -> bool:
    return name == WALL_PREFIX or name.startswith(WALL_PREFIX + ":")


def edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass
class Element:
    kind: str
    nodes: np.ndarray
    block: str = ""
    layer: int = 0
    wall_side: int | None = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)

    @property
    def order(self) -> int:
        return lagrange.order_from_count(self.kind, len(self.nodes))

    @property
    def block_kind(self) -> str:
        return self.block.split(":", 1)[0]

    @property
    def n_sides(self) -> int:
        return lagrange.n_vertices(self.kind)

    @property
    def vertices(self) -> np.ndarray:
        return self.nodes[: self.n_sides]

    def side_nodes(self, k: int) -> np.ndarray:
        return self.nodes[list(lagrange.side_indices(self.kind, self.order)[k])]

    def side_vertices(self, k: int) -> tuple[int, int]:
        n = self.n_sides
        return int(self.nodes[k]), int(self.nodes[(k + 1) % n])


@dataclass
class Mesh:
    nodes: np.ndarray
    elements: list = field(default_factory=list)
    patches: dict = field(default_factory=dict)
    node_geom: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)

    @property
    def order(self) -> int:
        orders = {e.order for e in self.elements}
        if len(orders) > 1:
            raise ValueError(f"mixed-order mesh: {sorted(orders)}")
        return orders.pop() if orders else 1

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def copy(self) -> "Mesh":
        return copy.deepcopy(self)

    def edge_map(self) -> dict:
        """Vertex-pair key -> list of (element index, local side)."""
        out: dict = {}
        for ei, e in enumerate(self.elements):
            for k in range(e.n_sides):
                out.setdefault(edge_key(*e.side_vertices(k)), []).append((ei, k))
        return out

    def boundary_edges(self) -> list:
        return [(key, inc[0]) for key, inc in self.edge_map().items() if len(inc) == 1]

    def patch_of_edges(self) -> dict:
        """Vertex-pair key -> patch name."""
        out = {}
        for name, edges in self.patches.items():
            for seq in edges:
                out[edge_key(seq[0], seq[-1])] = name
        return out

    def wall_patches(self) -> list:
        return [p for p in self.patches if is_wall_patch(p)]

    def element_coords(self, e: Element) -> np.ndarray:
        return self.nodes[e.nodes]

    @property
    def scale(self) -> float:
        if len(self.nodes) == 0:
            return 1.0
        span = self.nodes.max(axis=0) - self.nodes.min(axis=0)
        return max(float(np.hypot(*span)), 1e-300)


class NodeWelder:
    """Incrementally collects nodes, merging points closer than ``tol``."""

    def __init__(self, tol: float = 1e-10, nodes=None):
        self.tol = tol
        self.coords: list = []
        self._grid: dict = {}
        if nodes is not None:
            for p in np.asarray(nodes, dtype=float):
                self._append(p)

    def _cell(self, p):
        return (int(np.floor(p[0] / self.tol)), int(np.floor(p[1] / self.tol)))

    def _append(self, p) -> int:
        idx = len(self.coords)
        self.coords.append((float(p[0]), float(p[1])))
        self._grid.setdefault(self._cell(p), []).append(idx)
        return idx

    def find(self, p) -> int | None:
        cx, cy = self._cell(p)
        best = None
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for idx in self._grid.get((cx + dx, cy + dy), ()):
                    q = self.coords[idx]
                    d = max(abs(q[0] - p[0]), abs(q[1] - p[1]))
                    if d <= self.tol and (best is None or idx < best):
                        best = idx
        return best

    def add(self, p) -> int:
        p = np.asarray(p, dtype=float)
        hit = self.find(p)
        return hit if hit is not None else self._append(p)

    def add_many(self, pts) -> np.ndarray:
        return np.array([self.add(p) for p in np.asarray(pts, dtype=float)], dtype=np.int64)

    def array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float).reshape(-1, 2)
