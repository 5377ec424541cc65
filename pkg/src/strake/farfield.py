"""Far-field triangulation around the near-field skin, and the final merge.

The skin is the part of the near-field boundary that is neither wall nor
domain box.  The region between the skin and the box is triangulated by
a constrained Delaunay method with quality refinement (Shewchuk's
Triangle, adaptive-precision predicates).  Skin segments are never split
so the triangles meet the quads vertex for vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import triangle
from scipy.spatial import cKDTree

from .errors import ExtractionError, MergeError, ResourceError
from .hocurve import elevate
from .medial import _cross
from .mesh import Element, Mesh, NodeWelder, edge_key, is_wall_patch

__all__ = [
    "SkinLoop",
    "Sizing",
    "extract_skin",
    "triangulate_farfield",
    "merge",
    "triangle_angles",
    "exempt_triangles",
    "min_angle",
    "delaunay_violations",
]

OUTER = "outer"
SKIN = "skin"


@dataclass
class SkinLoop:
    """Chain of skin edges with the near-field on their left."""

    vertices: list
    edges: list
    points: np.ndarray
    closed: bool
    seed: np.ndarray
    hole: bool = True

    def __len__(self):
        return len(self.edges)


def _fixed_patch(name: str) -> bool:
    return is_wall_patch(name) or name == OUTER


def extract_skin(m: Mesh) -> list:
    """Chain the incidence-1 edges that are not wall or box edges.

    Chains must close, or end on nodes of the ``outer`` patch (a strip
    reaching the domain box).  Raises :class:`ExtractionError` otherwise.
    """
    fixed = set()
    outer_nodes = set()
    for name, seqs in m.patches.items():
        if _fixed_patch(name):
            for s in seqs:
                fixed.add(edge_key(s[0], s[-1]))
        if name == OUTER:
            for s in seqs:
                outer_nodes.update(int(v) for v in s)
    out_edges: dict = {}
    owner: dict = {}
    for key, (ei, k) in sorted(m.boundary_edges()):
        if key in fixed:
            continue
        e = m.elements[ei]
        a, b = e.side_vertices(k)
        if a in out_edges:
            raise ExtractionError(f"skin vertex {a} starts two edges")
        out_edges[a] = (b, tuple(int(v) for v in e.side_nodes(k)))
        owner[a] = ei
    incoming = {b for b, _ in out_edges.values()}
    starts = sorted(a for a in out_edges if a not in incoming)
    for a in starts:
        if a not in outer_nodes:
            raise ExtractionError(f"open skin chain starts at node {a}, away from the domain box")
    for b in sorted(incoming - set(out_edges)):
        if b not in outer_nodes:
            raise ExtractionError(f"open skin chain ends at node {b}, away from the domain box")
    used = set()
    loops = []
    for a0 in starts + sorted(out_edges):
        if a0 in used:
            continue
        verts, edges = [a0], []
        a = a0
        while a in out_edges and a not in used:
            used.add(a)
            b, seq = out_edges[a]
            edges.append(seq)
            verts.append(b)
            a = b
        closed = verts[-1] == verts[0]
        if closed:
            verts = verts[:-1]
        e = m.elements[owner[a0]]
        seed = m.nodes[e.vertices].mean(axis=0)
        pts = m.nodes[verts]
        area = 0.5 * float(np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1]))
        loops.append(SkinLoop(verts, edges, pts, closed, seed, hole=(not closed) or area > 0))
    return loops


# -- sizing ----------------------------------------------------------------------------

@dataclass
class Sizing:
    """Target edge length grading from the skin spacing to ``h_far``."""

    h_far: float
    gradation: float = 1.3
    min_angle: float = 20.0
    node_budget: int = 1_000_000
    _tree: object = field(default=None, repr=False)
    _local: np.ndarray = field(default=None, repr=False)

    def attach(self, skins):
        mids, lens = [], []
        for s in skins:
            p = s.points
            idx = list(range(len(p))) + ([0] if s.closed else [])
            for i, j in zip(idx[:-1], idx[1:]):
                mids.append(0.5 * (p[i] + p[j]))
                lens.append(np.linalg.norm(p[j] - p[i]))
        if mids:
            self._tree = cKDTree(np.array(mids))
            self._local = np.array(lens)
        return self

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self._tree is None:
            return np.full(len(pts), self.h_far)
        d, i = self._tree.query(pts)
        return np.minimum(self.h_far, self._local[i] + (self.gradation - 1.0) * d)


def _split_box_edge(a, b, size, fixed):
    """Points from a to b (a included, b excluded) spaced by the size field."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    L = float(np.linalg.norm(b - a))
    d = (b - a) / L
    stops = sorted({0.0, L} | {float(np.dot(p - a, d)) for p in fixed})
    out = []
    for s0, s1 in zip(stops[:-1], stops[1:]):
        # Walk with the local size, then stretch to land on s1.
        ss = [s0]
        while ss[-1] < s1:
            ss.append(ss[-1] + float(size(a + ss[-1] * d)[0]))
        n = max(1, len(ss) - 1)
        if len(ss) > 2 and ss[-1] - s1 > 0.5 * (ss[-1] - ss[-2]):
            n -= 1
        walk = np.array(ss[: n + 1])
        walk = s0 + (walk - s0) * (s1 - s0) / (walk[-1] - s0) if n > 0 else np.array([s0, s1])
        if len(walk) < 2:
            walk = np.array([s0, s1])
        out.extend(a + s * d for s in walk[:-1])
    return out


def _on_box(p, box, tol):
    xmin, xmax, ymin, ymax = box
    return (abs(p[0] - xmin) <= tol or abs(p[0] - xmax) <= tol
            or abs(p[1] - ymin) <= tol or abs(p[1] - ymax) <= tol)


def triangulate_farfield(skins, outer, sizing: Sizing | float) -> Mesh:
    """Quality constrained Delaunay triangulation between skins and the box.

    Parameters
    ----------
    skins : list of SkinLoop
    outer : (xmin, xmax, ymin, ymax)
    sizing : Sizing or float
        A float is taken as ``h_far``.

    The first vertices of the result are the skin vertices in input
    order.  Patches: ``skin`` (constrained skin edges) and ``outer``.
    """
    if not isinstance(sizing, Sizing):
        sizing = Sizing(float(sizing))
    sizing.attach(skins)
    xmin, xmax, ymin, ymax = map(float, outer)
    span = max(xmax - xmin, ymax - ymin)
    tol = 1e-10 * span
    verts: list = []
    segs: list = []
    index: dict = {}

    def vid(p):
        key = (round(p[0] / tol), round(p[1] / tol))
        if key not in index:
            index[key] = len(verts)
            verts.append((float(p[0]), float(p[1])))
        return index[key]

    skin_pairs = []
    on_box: list = []
    for s in skins:
        for p in s.points:
            if p[0] < xmin - tol or p[0] > xmax + tol or p[1] < ymin - tol or p[1] > ymax + tol:
                raise ValueError(f"skin point {p} lies outside the domain box")
        ids = [vid(p) for p in s.points]
        n = len(ids)
        pairs = [(ids[i], ids[(i + 1) % n]) for i in range(n if s.closed else n - 1)]
        for a, b in pairs:
            mid = 0.5 * (np.array(verts[a]) + np.array(verts[b]))
            if _on_box(mid, outer, tol):
                raise ValueError(f"skin edge {verts[a]}-{verts[b]} lies on the domain box")
        segs.extend(pairs)
        skin_pairs.extend(pairs)
        on_box.extend(p for p in s.points if _on_box(p, outer, tol))
    corners = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]
    box_ids = []
    for k in range(4):
        a, b = np.array(corners[k]), np.array(corners[(k + 1) % 4])
        d = (b - a) / np.linalg.norm(b - a)
        fixed = [p for p in on_box
                 if abs((p - a)[0] * d[1] - (p - a)[1] * d[0]) <= tol and 0 < np.dot(p - a, d) < np.linalg.norm(b - a)]
        box_ids.extend(vid(p) for p in _split_box_edge(a, b, sizing, fixed))
    nb = len(box_ids)
    box_pairs = [(box_ids[i], box_ids[(i + 1) % nb]) for i in range(nb)]
    segs.extend(box_pairs)
    holes = [s.seed for s in skins if s.hole]
    data = dict(vertices=np.array(verts), segments=np.array(segs, dtype=np.int32))
    if holes:
        data["holes"] = np.array(holes)
    q = f"q{sizing.min_angle:g}"
    out = triangle.triangulate(data, f"p{q}YQ")
    for _ in range(30):
        if len(out["vertices"]) > sizing.node_budget:
            raise ResourceError(f"far-field refinement exceeded the node budget {sizing.node_budget}")
        V, T = out["vertices"], out["triangles"]
        c = V[T].mean(axis=1)
        target = math.sqrt(3) / 4 * sizing(c) ** 2
        area = 0.5 * np.abs(_cross(V[T[:, 1]] - V[T[:, 0]], V[T[:, 2]] - V[T[:, 0]]))
        if np.all(area <= 1.5 * target):
            break
        out = triangle.triangulate(dict(out, triangle_max_area=target), f"rp{q}YaQ")
    if len(out["vertices"]) > sizing.node_budget:
        raise ResourceError(f"far-field refinement exceeded the node budget {sizing.node_budget}")
    V = np.asarray(out["vertices"], float)
    T = np.asarray(out["triangles"], dtype=np.int64)
    elements = []
    for t in T:
        p = V[t]
        if _cross(p[1] - p[0], p[2] - p[0]) < 0:
            t = t[[0, 2, 1]]
        elements.append(Element("tri", t, "far"))
    patches = {SKIN: [(int(b), int(a)) for a, b in skin_pairs], OUTER: [(int(a), int(b)) for a, b in box_pairs]}
    return Mesh(V, elements, patches)


# -- quality checks ---------------------------------------------------------------------

def triangle_angles(m: Mesh) -> np.ndarray:
    """Interior angles (degrees) of every triangle, shape (n_tri, 3)."""
    tri = np.array([e.vertices for e in m.elements if e.kind == "tri"], dtype=np.int64).reshape(-1, 3)
    p = m.nodes[tri]
    out = np.empty((len(tri), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, k] = np.degrees(np.arccos(np.clip(c, -1, 1)))
    return out


def _constrained_pairs(m: Mesh):
    out = []
    for name in (SKIN, OUTER):
        out.extend((s[0], s[-1]) for s in m.patches.get(name, []))
    return out


def _circumcircles(p):
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    d = 2 * _cross(b - a, c - a)
    bb = np.sum((b - a) ** 2, axis=1)
    cc = np.sum((c - a) ** 2, axis=1)
    ux = ((c - a)[:, 1] * bb - (b - a)[:, 1] * cc) / d
    uy = ((b - a)[:, 0] * cc - (c - a)[:, 0] * bb) / d
    return a + np.stack([ux, uy], axis=1), np.hypot(ux, uy)


def exempt_triangles(m: Mesh, min_angle_deg: float = 20.0) -> np.ndarray:
    """Mask of triangles whose small angle is forced by a skin constraint.

    A triangle is exempt when its circumcentre encroaches on a skin
    segment (lies in its diametral disk): refinement would have to split
    that segment, which conformity with the quads forbids.
    """
    tri = np.array([e.vertices for e in m.elements if e.kind == "tri"], dtype=np.int64).reshape(-1, 3)
    if len(tri) == 0:
        return np.zeros(0, bool)
    cen, _ = _circumcircles(m.nodes[tri])
    skin = [(s[0], s[-1]) for s in m.patches.get(SKIN, [])]
    mask = np.zeros(len(tri), bool)
    if not skin:
        return mask
    A = m.nodes[[a for a, _ in skin]]
    B = m.nodes[[b for _, b in skin]]
    mid, rad = 0.5 * (A + B), 0.5 * np.linalg.norm(B - A, axis=1)
    tree = cKDTree(mid)
    rmax = float(rad.max())
    for i, c in enumerate(cen):
        for j in tree.query_ball_point(c, rmax):
            if np.linalg.norm(c - mid[j]) < rad[j]:
                mask[i] = True
                break
    return mask


def min_angle(m: Mesh, exempt: bool = True, min_angle_deg: float = 20.0) -> float:
    ang = triangle_angles(m)
    if len(ang) == 0:
        return 180.0
    worst = ang.min(axis=1)
    if exempt:
        worst = worst[~exempt_triangles(m, min_angle_deg)]
    return float(worst.min()) if len(worst) else 180.0


def _segments_cross(p, q, A, B):
    """Whether segment pq properly crosses any of the segments A[i]B[i]."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    o1 = orient(p, q, A)
    o2 = orient(p, q, B)
    o3 = orient(A, B, p)
    o4 = orient(A, B, q)
    return bool(np.any((o1 * o2 < 0) & (o3 * o4 < 0)))


def delaunay_violations(m: Mesh, rel_tol: float = 1e-10) -> list:
    """Triangles whose circumcircle strictly contains a visible vertex.

    Vertices hidden behind a constrained (skin or box) segment do not
    count, which is the constrained Delaunay criterion.
    """
    tri_ids = [i for i, e in enumerate(m.elements) if e.kind == "tri"]
    tri = np.array([m.elements[i].vertices for i in tri_ids], dtype=np.int64).reshape(-1, 3)
    if len(tri) == 0:
        return []
    used = np.unique(tri)
    pts = m.nodes[used]
    tree = cKDTree(pts)
    cen, rad = _circumcircles(m.nodes[tri])
    cons = _constrained_pairs(m)
    A = m.nodes[[a for a, _ in cons]] if cons else np.zeros((0, 2))
    B = m.nodes[[b for _, b in cons]] if cons else np.zeros((0, 2))
    bad = []
    for i, (c, r) in enumerate(zip(cen, rad)):
        inside = tree.query_ball_point(c, r * (1 - rel_tol))
        own = set(tri[i])
        g = m.nodes[tri[i]].mean(axis=0)
        for j in inside:
            v = int(used[j])
            if v in own or np.linalg.norm(pts[j] - c) >= r * (1 - rel_tol):
                continue
            if len(A) and _segments_cross(g, pts[j], A, B):
                continue
            bad.append(tri_ids[i])
            break
    return bad


# -- merge ---------------------------------------------------------------------------------

def merge(near: Mesh, far: Mesh) -> Mesh:
    """Weld the near-field and the elevated far-field into one mesh.

    Far triangles are raised to the near-field order with straight
    sides.  Every skin edge of the near field must reappear in the far
    field with the same high-order nodes.
    """
    P = near.order if near.elements else 1
    far_p = elevate(far, P) if (far.elements and far.order == 1 and P > 1) else far
    welder = NodeWelder(tol=1e-10 * max(near.scale, far.scale), nodes=near.nodes)
    elements = [Element(e.kind, e.nodes.copy(), e.block, e.layer, e.wall_side) for e in near.elements]
    remap = welder.add_many(far_p.nodes)
    for e in far_p.elements:
        elements.append(Element(e.kind, remap[e.nodes], e.block, e.layer, e.wall_side))
    nodes = welder.array()
    patches = {k: list(v) for k, v in near.patches.items() if k not in (SKIN, "wake-end")}
    for name, seqs in far_p.patches.items():
        if name == SKIN:
            continue
        patches.setdefault(name, []).extend(tuple(int(remap[v]) for v in s) for s in seqs)
    out = Mesh(nodes, elements, patches, {k: dict(v) for k, v in near.node_geom.items()})
    # Every near-field skin edge must now be shared with a triangle, node for node.
    emap = out.edge_map()
    unmatched = []
    fixed = {edge_key(s[0], s[-1]) for n, seqs in near.patches.items() if _fixed_patch(n) for s in seqs}
    for key, (ei, k) in near.boundary_edges():
        if key in fixed:
            continue
        inc = emap.get(key, [])
        if len(inc) != 2:
            unmatched.extend(int(v) for v in near.elements[ei].side_nodes(k))
            continue
        (e1, k1), (e2, k2) = inc
        a = list(out.elements[e1].side_nodes(k1))
        b = list(out.elements[e2].side_nodes(k2))[::-1]
        if a != b:
            unmatched.extend(sorted(set(a) ^ set(b)))
    if unmatched:
        raise MergeError(f"skin nodes without a far-field partner: {sorted(set(unmatched))[:20]}")
    return out
