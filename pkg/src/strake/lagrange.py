"""Reference elements and Lagrange bases on equidistant nodes.

Internal node ordering (used everywhere except file writers):

* quad, reference square [-1, 1]^2: the four vertices counter-clockwise
  from (-1, -1), then the P-1 nodes of each edge 0->1, 1->2, 2->3, 3->0
  in edge direction, then interior nodes row by row (xi_1 fastest).
* triangle, reference (0,0), (1,0), (0,1): vertices, edge nodes in the
  same edge-direction convention, interior nodes row by row.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def quad_lattice(P: int) -> np.ndarray:
    """Integer lattice coordinates (i, j) of the quad nodes, internal order."""
    pts = [(0, 0), (P, 0), (P, P), (0, P)]
    pts += [(k, 0) for k in range(1, P)]
    pts += [(P, k) for k in range(1, P)]
    pts += [(P - k, P) for k in range(1, P)]
    pts += [(0, P - k) for k in range(1, P)]
    pts += [(i, j) for j in range(1, P) for i in range(1, P)]
    out = np.array(pts, dtype=int)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def tri_lattice(P: int) -> np.ndarray:
    pts = [(0, 0), (P, 0), (0, P)]
    pts += [(k, 0) for k in range(1, P)]
    pts += [(P - k, k) for k in range(1, P)]
    pts += [(0, P - k) for k in range(1, P)]
    pts += [(i, j) for j in range(1, P) for i in range(1, P - j)]
    out = np.array(pts, dtype=int)
    out.setflags(write=False)
    return out


def lattice(kind: str, P: int) -> np.ndarray:
    return quad_lattice(P) if kind == "quad" else tri_lattice(P)


def ref_nodes(kind: str, P: int) -> np.ndarray:
    lat = lattice(kind, P).astype(float)
    if kind == "quad":
        return -1.0 + 2.0 * lat / P
    return lat / P


def n_nodes(kind: str, P: int) -> int:
    return (P + 1) ** 2 if kind == "quad" else (P + 1) * (P + 2) // 2


def n_vertices(kind: str) -> int:
    return 4 if kind == "quad" else 3


def order_from_count(kind: str, count: int) -> int:
    for P in range(1, 16):
        if n_nodes(kind, P) == count:
            return P
    raise ValueError(f"no {kind} order with {count} nodes")


@lru_cache(maxsize=None)
def side_indices(kind: str, P: int) -> tuple:
    """Local node indices along each side, from its start to end vertex."""
    nv = n_vertices(kind)
    sides = []
    for k in range(nv):
        inner = [nv + k * (P - 1) + m for m in range(P - 1)]
        sides.append(tuple([k] + inner + [(k + 1) % nv]))
    return tuple(sides)


@lru_cache(maxsize=None)
def grid_index(P: int) -> np.ndarray:
    """Map lattice (i, j) -> internal local index for quads."""
    g = np.empty((P + 1, P + 1), dtype=int)
    for idx, (i, j) in enumerate(quad_lattice(P)):
        g[i, j] = idx
    g.setflags(write=False)
    return g


# -- 1D Lagrange on equidistant nodes -------------------------------------------

def lagrange_1d(P: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the P+1 equidistant Lagrange polynomials.

    Returns arrays of shape (m, P+1) for m evaluation points in [-1, 1].
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nodes = np.linspace(-1.0, 1.0, P + 1)
    m = len(x)
    val = np.zeros((m, P + 1))
    der = np.zeros((m, P + 1))
    for j in range(P + 1):
        others = [k for k in range(P + 1) if k != j]
        denom = np.prod(nodes[j] - nodes[others])
        diffs = x[:, None] - nodes[others][None, :]
        val[:, j] = np.prod(diffs, axis=1) / denom
        acc = np.zeros(m)
        for q in range(len(others)):
            acc += np.prod(np.delete(diffs, q, axis=1), axis=1)
        der[:, j] = acc / denom
    return val, der


def quad_basis(P: int, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor Lagrange basis (m, n) and its xi_1 / xi_2 derivatives."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    v1, d1 = lagrange_1d(P, xi[:, 0])
    v2, d2 = lagrange_1d(P, xi[:, 1])
    lat = quad_lattice(P)
    i, j = lat[:, 0], lat[:, 1]
    return v1[:, i] * v2[:, j], d1[:, i] * v2[:, j], v1[:, i] * d2[:, j]


@lru_cache(maxsize=None)
def _tri_vandermonde_inv(P: int) -> np.ndarray:
    lat = tri_lattice(P)
    r = lat / P
    exps = [(a, b) for a in range(P + 1) for b in range(P + 1 - a)]
    V = np.array([[x**a * y**b for (a, b) in exps] for x, y in r])
    return np.linalg.inv(V)


def tri_basis(P: int, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x, y = xi[:, 0], xi[:, 1]
    exps = [(a, b) for a in range(P + 1) for b in range(P + 1 - a)]
    M = np.stack([x**a * y**b for a, b in exps], axis=1)
    Mx = np.stack([a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x) for a, b in exps], axis=1)
    My = np.stack([b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(x) for a, b in exps], axis=1)
    Vi = _tri_vandermonde_inv(P)
    return M @ Vi, Mx @ Vi, My @ Vi


def basis(kind: str, P: int, xi):
    return quad_basis(P, xi) if kind == "quad" else tri_basis(P, xi)


# -- sample rules for Jacobian scans ------------------------------------------------

def gauss_points(kind: str, k: int) -> np.ndarray:
    """k x k tensor Gauss points (collapsed onto the triangle for tris)."""
    g, _ = np.polynomial.legendre.leggauss(k)
    a, b = np.meshgrid(g, g, indexing="xy")
    a, b = a.ravel(), b.ravel()
    if kind == "quad":
        return np.stack([a, b], axis=1)
    # Duffy collapse of the square onto the reference triangle.
    u, v = (a + 1) / 2, (b + 1) / 2
    return np.stack([u * (1 - v), v], axis=1)


def sample_points(kind: str, P: int, rule: str = "default") -> np.ndarray:
    """Default: (P+3)^2 Gauss points plus the nodal points; 'fine': (2P+3)^2."""
    k = 2 * P + 3 if rule == "fine" else P + 3
    return np.vstack([gauss_points(kind, k), ref_nodes(kind, P)])
