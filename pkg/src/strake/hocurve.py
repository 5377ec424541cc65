"""A-posteriori high-order enrichment of a linear mesh.

Elements are first elevated with straight sides.  High-order nodes of
wall edges are then projected onto their parent curve and redistributed
at equal arc length, and the interior nodes of the affected elements are
relaxed with a uniform spring system on the reference grid.  Validity is
judged from the mapping determinant sampled at Gauss and nodal points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lagrange
from .errors import RelaxationError
from .mesh import Element, Mesh, edge_key, is_wall_patch
from .parallel import pmap

__all__ = [
    "CurvingHazardWarning",
    "MappingChi",
    "EdgeRecord",
    "ValidityReport",
    "elevate",
    "project_boundary_edges",
    "relax_edge_nodes",
    "spring_energy",
    "smooth_interior_nodes",
    "jacobian_range",
    "check_validity",
    "curve_mesh",
]


class CurvingHazardWarning(UserWarning):
    """A projected node moved further than the local element thickness."""


class MappingChi:
    """Lagrange map from the reference element to a physical element.

    Parameters
    ----------
    kind : {"quad", "tri"}
    P : int
        Polynomial order.
    nodes : array_like, shape (n, 2)
        Control nodes in internal ordering.
    """

    def __init__(self, kind: str, P: int, nodes, element_id=None):
        self.kind = kind
        self.P = int(P)
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        self.element_id = element_id
        if len(self.nodes) != lagrange.n_nodes(kind, self.P):
            raise ValueError(
                f"{kind} of order {P} needs {lagrange.n_nodes(kind, self.P)} nodes, got {len(self.nodes)}"
            )

    @classmethod
    def from_element(cls, mesh: Mesh, index: int) -> "MappingChi":
        e = mesh.elements[index]
        return cls(e.kind, e.order, mesh.nodes[e.nodes], index)

    @property
    def ref_nodes(self) -> np.ndarray:
        return lagrange.ref_nodes(self.kind, self.P)

    def evaluate(self, xi) -> np.ndarray:
        N, _, _ = lagrange.basis(self.kind, self.P, xi)
        return N @ self.nodes

    __call__ = evaluate

    def jacobian(self, xi) -> np.ndarray:
        """d(x, y)/d(xi_1, xi_2) at each point, shape (m, 2, 2)."""
        _, d1, d2 = lagrange.basis(self.kind, self.P, xi)
        return np.stack([d1 @ self.nodes, d2 @ self.nodes], axis=-1)

    def det(self, xi) -> np.ndarray:
        J = self.jacobian(xi)
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]


# -- elevation ----------------------------------------------------------------------

def elevate(mesh: Mesh, P: int) -> Mesh:
    """Straight-sided order-P copy of an order-1 mesh.

    Edge nodes are equidistant and created once per edge, so neighbours
    share them.  Interior nodes are the bilinear (quad) or affine (tri)
    images of the reference positions.
    """
    if P < 1:
        raise ValueError(f"order must be >= 1, got {P}")
    if mesh.elements and mesh.order != 1:
        raise ValueError(f"elevate expects an order-1 mesh, got order {mesh.order}")
    coords = [tuple(p) for p in mesh.nodes]
    edge_nodes: dict = {}

    def edge_interior(a, b):
        key = edge_key(a, b)
        if key not in edge_nodes:
            pa, pb = mesh.nodes[key[0]], mesh.nodes[key[1]]
            ids = []
            for m in range(1, P):
                coords.append(tuple(pa + (pb - pa) * m / P))
                ids.append(len(coords) - 1)
            edge_nodes[key] = ids
        ids = edge_nodes[key]
        return ids if a < b else ids[::-1]

    elements = []
    for e in mesh.elements:
        nv = e.n_sides
        ids = list(e.nodes[:nv])
        for k in range(nv):
            ids += edge_interior(*e.side_vertices(k))
        ref = lagrange.ref_nodes(e.kind, P)
        n_int = lagrange.n_nodes(e.kind, P) - len(ids)
        if n_int:
            N, _, _ = lagrange.basis(e.kind, 1, ref[-n_int:])
            for p in N @ mesh.nodes[e.nodes]:
                coords.append(tuple(p))
                ids.append(len(coords) - 1)
        elements.append(Element(e.kind, ids, e.block, e.layer, e.wall_side))

    patches = {}
    for name, seqs in mesh.patches.items():
        patches[name] = [tuple([s[0]] + edge_interior(s[0], s[-1]) + [s[-1]]) for s in seqs]
    node_geom = {k: dict(v) for k, v in mesh.node_geom.items()}
    return Mesh(np.array(coords, dtype=float).reshape(-1, 2), elements, patches, node_geom)


# -- boundary projection and relaxation ----------------------------------------------

def _arc_positions(curve, params):
    """Signed arc length of each parameter from params[0], positive toward params[-1]."""
    params = np.asarray(params, float)
    direction = 1.0 if params[-1] >= params[0] else -1.0
    out = np.zeros(len(params))
    for k in range(1, len(params)):
        lo, hi = sorted((params[0], params[k]))
        out[k] = direction * np.sign(params[k] - params[0]) * curve.arc_length(lo, hi)
    return out


def spring_energy(curve, params) -> float:
    """Uniform spring-chain energy sum((ds - L/P)^2) in arc length."""
    s = _arc_positions(curve, params)
    P = len(params) - 1
    return float(np.sum((np.diff(s) - s[-1] / P) ** 2))


def relax_edge_nodes(curve, params, edge=None) -> np.ndarray:
    """Place interior parameters at equal arc-length fractions.

    End parameters are kept.  The uniform spring chain measured in arc
    length has this placement as its exact minimiser.

    Raises
    ------
    RelaxationError
        If the input parameters are not strictly monotone (a fold from
        projection).
    """
    params = np.asarray(params, dtype=float)
    d = np.diff(params)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise RelaxationError(
            f"edge {edge if edge is not None else ''} on curve {curve.id!r}: non-monotone parameters {params}"
        )
    P = len(params) - 1
    lo, hi = sorted((params[0], params[-1]))
    total = curve.arc_length(lo, hi)
    out = np.empty_like(params)
    out[0] = lo
    for k in range(1, P):
        out[k] = curve.invert_arc(lo, total * k / P)
    out[-1] = hi
    if params[0] > params[-1]:
        out = out[::-1]
    out[0], out[-1] = params[0], params[-1]
    return out


@dataclass
class EdgeRecord:
    patch: str
    nodes: tuple
    curve_id: str
    energy_projected: float
    energy_relaxed: float
    max_move: float


def _edge_thickness(mesh: Mesh):
    """Wall-edge key -> shortest adjacent side length of its element."""
    out = {}
    emap = mesh.edge_map()
    for key, inc in emap.items():
        ei, k = inc[0]
        e = mesh.elements[ei]
        n = e.n_sides
        lens = []
        for kk in ((k - 1) % n, (k + 1) % n):
            a, b = e.side_vertices(kk)
            lens.append(float(np.linalg.norm(mesh.nodes[a] - mesh.nodes[b])))
        out[key] = min(lens)
    return out


def _pick_curve(mesh, curves, a, b, mid):
    ga, gb = mesh.node_geom.get(a, {}), mesh.node_geom.get(b, {})
    common = sorted(set(ga) & set(gb))
    common = [c for c in common if c in curves]
    if not common:
        return None
    if len(common) == 1:
        return common[0]
    return min(common, key=lambda c: curves[c].project(mid)[1])


def project_boundary_edges(mesh: Mesh, curves, relax: bool = True, records: list | None = None,
                           workers: int | None = None) -> Mesh:
    """Move the high-order nodes of wall edges onto their parent curves.

    ``curves`` maps curve id to curve (a sequence of curves is accepted
    too).  Each wall edge is processed once; the parent curve is the one
    shared by the geometry associations of both end vertices.  Per-edge
    spring energies before and after relaxation are appended to
    ``records`` when given.  Projections run on ``workers`` threads
    (default from ``STRAKE_THREADS``).
    """
    if not isinstance(curves, dict):
        curves = {c.id: c for c in curves}
    out = mesh.copy()
    thick = _edge_thickness(mesh)
    done = set()
    tasks = []
    for name in sorted(mesh.patches):
        if not is_wall_patch(name):
            continue
        for seq in mesh.patches[name]:
            a, b = int(seq[0]), int(seq[-1])
            key = edge_key(a, b)
            if key in done or len(seq) < 3:
                continue
            done.add(key)
            inner = [int(v) for v in seq[1:-1]]
            cid = _pick_curve(mesh, curves, a, b, mesh.nodes[inner].mean(axis=0))
            if cid is not None:
                tasks.append((name, seq, key, inner, cid))

    def _project(task):
        _, seq, _, inner, cid = task
        curve = curves[cid]
        a, b = int(seq[0]), int(seq[-1])
        return [mesh.node_geom[a][cid]] + [curve.project(mesh.nodes[v])[0] for v in inner] + [mesh.node_geom[b][cid]]

    for (name, seq, key, inner, cid), t_proj in zip(tasks, pmap(_project, tasks, workers)):
        curve = curves[cid]
        t_new = relax_edge_nodes(curve, t_proj, key) if relax else np.asarray(t_proj)
        pts = curve.evaluate(np.asarray(t_new[1:-1]))
        move = float(np.max(np.linalg.norm(pts - mesh.nodes[inner], axis=1)))
        if move > thick.get(key, np.inf):
            warnings.warn(
                f"edge {key} on {cid!r}: node moved {move:.3e}, more than element thickness "
                f"{thick[key]:.3e}",
                CurvingHazardWarning,
                stacklevel=2,
            )
        out.nodes[inner] = pts
        for v, t in zip(inner, t_new[1:-1]):
            out.node_geom[v] = {cid: float(t)}
        if records is not None:
            records.append(EdgeRecord(
                name, tuple(int(v) for v in seq), cid,
                spring_energy(curve, t_proj), spring_energy(curve, t_new), move,
            ))
    return out


# -- interior smoothing ---------------------------------------------------------------

def _interior_graph(kind: str, P: int):
    lat = lagrange.lattice(kind, P)
    index = {tuple(ij): k for k, ij in enumerate(lat)}
    nb = 4 if kind == "quad" else 6
    steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    if kind == "tri":
        steps += [(1, -1), (-1, 1)]
    first = lagrange.n_vertices(kind) * P
    interior = list(range(first, len(lat)))
    neigh = [[index[(lat[k][0] + di, lat[k][1] + dj)] for di, dj in steps] for k in interior]
    return interior, neigh, nb


def smooth_interior_nodes(chi: MappingChi) -> MappingChi:
    """Uniform-spring equilibrium of the interior nodes (direct solve).

    Each interior node becomes the average of its reference-grid
    neighbours (4 for quads, 6 for triangles).  Vertex and edge nodes
    are held fixed.
    """
    interior, neigh, nb = _interior_graph(chi.kind, chi.P)
    if not interior:
        return MappingChi(chi.kind, chi.P, chi.nodes.copy(), chi.element_id)
    pos = {k: i for i, k in enumerate(interior)}
    n = len(interior)
    A = np.zeros((n, n))
    rhs = np.zeros((n, 2))
    for i, k in enumerate(interior):
        A[i, i] = nb
        for j in neigh[i]:
            if j in pos:
                A[i, pos[j]] -= 1.0
            else:
                rhs[i] += chi.nodes[j]
    nodes = chi.nodes.copy()
    nodes[interior] = np.linalg.solve(A, rhs)
    return MappingChi(chi.kind, chi.P, nodes, chi.element_id)


# -- validity --------------------------------------------------------------------------

def jacobian_range(chi: MappingChi, rule: str = "default") -> tuple[float, float]:
    """Min and max of det(d chi / d xi) over the sample rule."""
    d = chi.det(lagrange.sample_points(chi.kind, chi.P, rule))
    return float(d.min()), float(d.max())


@dataclass
class ValidityReport:
    min_det: np.ndarray
    max_det: np.ndarray
    scaled: np.ndarray
    invalid: list = field(default_factory=list)

    @property
    def n_invalid(self) -> int:
        return len(self.invalid)

    @property
    def valid(self) -> bool:
        return not self.invalid

    @property
    def worst_id(self):
        return int(np.argmin(self.scaled)) if len(self.scaled) else None

    @property
    def worst_scaled(self) -> float:
        return float(np.min(self.scaled)) if len(self.scaled) else 1.0


def _scaled(mn, mx):
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mx != 0, mn / np.abs(mx), -np.inf)
    return s


def element_det_samples(mesh: Mesh, rule: str = "default") -> list:
    """Sampled determinants per element, shape (n_samples,) each."""
    groups: dict = {}
    for i, e in enumerate(mesh.elements):
        groups.setdefault((e.kind, len(e.nodes)), []).append(i)
    out = [None] * len(mesh.elements)
    for (kind, count), ids in groups.items():
        P = lagrange.order_from_count(kind, count)
        _, d1, d2 = lagrange.basis(kind, P, lagrange.sample_points(kind, P, rule))
        X = mesh.nodes[np.array([mesh.elements[i].nodes for i in ids])]
        a = np.einsum("sn,enc->esc", d1, X)
        b = np.einsum("sn,enc->esc", d2, X)
        det = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        for row, i in enumerate(ids):
            out[i] = det[row]
    return out


def check_validity(mesh: Mesh, rule: str = "default") -> ValidityReport:
    """Sampled Jacobian extrema for every element; invalid iff min <= 0."""
    dets = element_det_samples(mesh, rule)
    mn = np.array([d.min() for d in dets]) if dets else np.zeros(0)
    mx = np.array([d.max() for d in dets]) if dets else np.zeros(0)
    sc = _scaled(mn, mx)
    invalid = [int(i) for i in np.nonzero(mn <= 0)[0]]
    return ValidityReport(mn, mx, sc, invalid)


def curve_mesh(mesh: Mesh, curves, P: int, smooth: bool = True, records: list | None = None,
               workers: int | None = None) -> Mesh:
    """Elevate, project wall edges, and smooth the touched elements."""
    high = elevate(mesh, P)
    curved = project_boundary_edges(high, curves, records=records, workers=workers)
    if not smooth:
        return curved
    wall = {edge_key(s[0], s[-1]) for n, seqs in curved.patches.items() if is_wall_patch(n) for s in seqs}
    for i, e in enumerate(curved.elements):
        if any(edge_key(*e.side_vertices(k)) in wall for k in range(e.n_sides)):
            chi = smooth_interior_nodes(MappingChi.from_element(curved, i))
            curved.nodes[e.nodes] = chi.nodes
    return curved
