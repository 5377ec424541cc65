"""Near-field shell construction and medial-set approximation.

The shell is the offset of a boundary loop at the boundary-layer
thickness.  Where the loop has a concave corner the offsets of the two
adjacent entities cross; the crossing point is a *halo*: it is at the
shell distance from both entities, hence on the medial set too.
Convex corners are closed with round joins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import GeometryError
from .geomkit import BoundaryLoop, arclength_params, arc_length, offset_samples

__all__ = [
    "HaloPoint",
    "MedialEdge",
    "Shell",
    "segment_intersections",
    "polyline_self_intersections",
    "detect_halos",
    "build_shell",
    "approximate_medial",
    "entity_distance",
]

_SMOOTH_TURN = 1e-6


@dataclass
class HaloPoint:
    position: np.ndarray
    source_entities: tuple
    radius: float


@dataclass
class MedialEdge:
    polyline: np.ndarray
    source_entities: tuple
    radius_profile: np.ndarray


@dataclass
class Shell:
    inner: BoundaryLoop
    outer: np.ndarray
    thickness: float
    halos: list = field(default_factory=list)
    spacing: float = 0.0

    @property
    def closed(self) -> bool:
        return self.inner.closed


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def segment_intersections(A, B, chunk: int = 512):
    """All intersections between segments of polylines A and B.

    Returns a list of ``(i, j, point)`` with i, j the segment indices.
    Touching endpoints count as intersections; collinear overlaps are
    ignored.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    p1, r = A[:-1], A[1:] - A[:-1]
    q1, s = B[:-1], B[1:] - B[:-1]
    bmin = np.minimum(B[:-1], B[1:])
    bmax = np.maximum(B[:-1], B[1:])
    out = []
    for start in range(0, len(p1), chunk):
        P, R = p1[start:start + chunk, None, :], r[start:start + chunk, None, :]
        a0, a1 = p1[start:start + chunk], p1[start:start + chunk] + r[start:start + chunk]
        amin = np.minimum(a0, a1)[:, None, :]
        amax = np.maximum(a0, a1)[:, None, :]
        near = np.all((amin <= bmax[None] + 1e-12) & (bmin[None] <= amax + 1e-12), axis=-1)
        if not near.any():
            continue
        ii, jj = np.nonzero(near)
        Pi, Ri = P[ii, 0], R[ii, 0]
        Qj, Sj = q1[jj], s[jj]
        denom = _cross(Ri, Sj)
        ok = np.abs(denom) > 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            t = _cross(Qj - Pi, Sj) / denom
            u = _cross(Qj - Pi, Ri) / denom
        eps = 1e-12
        hit = ok & (t >= -eps) & (t <= 1 + eps) & (u >= -eps) & (u <= 1 + eps)
        for k in np.nonzero(hit)[0]:
            out.append((start + int(ii[k]), int(jj[k]), Pi[k] + t[k] * Ri[k]))
    return out


def polyline_self_intersections(A, closed: bool = False):
    """Intersections between non-adjacent segments of one polyline."""
    A = np.asarray(A, float)
    nseg = len(A) - 1
    res = []
    for i, j, p in segment_intersections(A, A):
        if j <= i + 1:
            continue
        if closed and i == 0 and j == nseg - 1:
            continue
        res.append((i, j, p))
    return res


def entity_distance(curves, p):
    """Distance from p to the nearest of ``curves`` and the foot point."""
    best = (math.inf, None)
    for c in curves:
        t, d = c.project(p)
        if d < best[0]:
            best = (d, c.evaluate(t))
    return best


def _polish(p, curves_a, curves_b, T, iters: int = 30):
    """Newton on dist_A(p) = dist_B(p) = T starting from p."""
    p = np.asarray(p, float).copy()
    for _ in range(iters):
        da, fa = entity_distance(curves_a, p)
        db, fb = entity_distance(curves_b, p)
        F = np.array([da - T, db - T])
        if np.max(np.abs(F)) < 1e-14:
            break
        if da == 0 or db == 0:
            break
        J = np.vstack([(p - fa) / da, (p - fb) / db])
        if abs(np.linalg.det(J)) < 1e-12:
            break
        p = p - np.linalg.solve(J, F)
    return p


def _arc_position(poly, i, p):
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    return float(seg[:i].sum() + np.linalg.norm(p - poly[i]))


def detect_halos(offsets, delta: float, entities: dict | None = None, T: float | None = None):
    """Self-intersection points of a set of offset polylines.

    Parameters
    ----------
    offsets : list of (polyline, tag)
    delta : float
        Sampling spacing; points closer than ``2 * delta`` are merged.
    entities : dict, optional
        tag -> list of curves.  When given together with ``T`` each
        crossing between distinct entities is polished onto the exact
        point at distance ``T`` from both.
    """
    raw = []
    n = len(offsets)
    for a in range(n):
        pa, ta = offsets[a]
        pa = np.asarray(pa, float)
        closed = len(pa) > 3 and np.linalg.norm(pa[0] - pa[-1]) <= 1e-14 * max(1.0, np.abs(pa).max())
        for i, j, p in polyline_self_intersections(pa, closed=closed):
            raw.append(((ta, ta), _arc_position(pa, i, p), p))
        for b in range(a + 1, n):
            pb, tb = offsets[b]
            pb = np.asarray(pb, float)
            if ta == tb:
                continue
            for i, j, p in segment_intersections(pa, pb):
                # Offsets of adjacent entities meeting at a smooth joint touch end to end.
                touch_a = min(np.linalg.norm(p - pa[0]), np.linalg.norm(p - pa[-1]))
                touch_b = min(np.linalg.norm(p - pb[0]), np.linalg.norm(p - pb[-1]))
                if touch_a < 1e-9 and touch_b < 1e-9:
                    continue
                pair = (ta, tb) if ta <= tb else (tb, ta)
                raw.append((pair, _arc_position(pa, i, p), p))
    raw.sort(key=lambda r: (r[0], r[1]))
    halos: list[HaloPoint] = []
    for pair, _, p in raw:
        if entities is not None and T is not None and pair[0] != pair[1]:
            p = _polish(p, entities[pair[0]], entities[pair[1]], T)
            radius = T
        else:
            radius = T if T is not None else float("nan")
        if any(h.source_entities == pair and np.linalg.norm(h.position - p) <= 2 * delta
               for h in halos):
            continue
        halos.append(HaloPoint(np.asarray(p, float), pair, radius))
    return halos


def _round_join(vertex, n_from, n_to, T, delta):
    """Clockwise arc of radius T around ``vertex`` between two normals."""
    a0 = math.atan2(n_from[1], n_from[0])
    a1 = math.atan2(n_to[1], n_to[0])
    sweep = (a1 - a0) % (2 * math.pi) - 2 * math.pi  # negative: clockwise
    k = max(1, int(math.ceil(abs(sweep) * T / delta)))
    ang = a0 + sweep * np.arange(1, k) / k
    return vertex + T * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def build_shell(boundary: BoundaryLoop, T: float, delta: float | None = None) -> Shell:
    """Offset ``boundary`` by ``T``, join corners and trim concave overlaps."""
    if not T > 0:
        raise ValueError(f"shell thickness must be positive, got {T}")
    delta = T / 20.0 if delta is None else float(delta)
    curves = boundary.curves
    tags = boundary.entity_tags
    polys = [offset_samples(c, T, delta) for c in curves]
    entities: dict = {}
    for c, tg in zip(curves, tags):
        entities.setdefault(tg, []).append(c)
    halos = detect_halos(list(zip(polys, tags)), delta, entities, T)

    keep_from = [0] * len(polys)
    keep_to = [len(p) for p in polys]
    head = [None] * len(polys)     # replacement first point
    tail = [None] * len(polys)     # replacement last point
    joins = [np.zeros((0, 2))] * len(polys)
    for i, j in boundary.joints():
        ci, cj = curves[i], curves[j]
        t_out, t_in = ci.tangent(ci.t_end), cj.tangent(cj.t_start)
        turn = float(_cross(t_out, t_in))
        angle = math.atan2(turn, float(np.dot(t_out, t_in)))
        vertex = ci.evaluate(ci.t_end)
        if abs(angle) < _SMOOTH_TURN:
            keep_from[j] = 1
            continue
        if angle < 0:
            joins[i] = _round_join(vertex, ci.normal(ci.t_end), cj.normal(cj.t_start), T, delta)
            continue
        hits = segment_intersections(polys[i], polys[j])
        if not hits:
            raise GeometryError(
                f"shell: offsets of {ci.id!r} and {cj.id!r} do not meet at a concave corner"
            )
        # Crossing nearest the corner: latest on the incoming, earliest on the outgoing.
        a, b, p = max(hits, key=lambda h: (h[0], -h[1]))
        pair = tuple(sorted((tags[i], tags[j])))
        match = [h for h in halos if h.source_entities == pair]
        if match:
            p = min(match, key=lambda h: np.linalg.norm(h.position - p)).position
        keep_to[i] = min(keep_to[i], a + 1)
        tail[i] = p
        keep_from[j] = max(keep_from[j], b + 1)
        head[j] = None if tail[i] is not None else p

    pieces = []
    for k, poly in enumerate(polys):
        lo, hi = keep_from[k], keep_to[k]
        if hi - lo < 1 and head[k] is None and tail[k] is None:
            raise GeometryError(f"shell collapsed along curve {curves[k].id!r}")
        part = [poly[lo:hi]]
        if head[k] is not None:
            part.insert(0, head[k][None])
        if tail[k] is not None:
            part.append(tail[k][None])
        part.append(joins[k])
        pieces.append(np.vstack(part))
    outer = np.vstack(pieces)
    # Drop consecutive duplicates introduced by joins.
    keep = np.ones(len(outer), bool)
    keep[1:] = np.linalg.norm(np.diff(outer, axis=0), axis=1) > 1e-14
    outer = outer[keep]
    if boundary.closed and np.linalg.norm(outer[0] - outer[-1]) > 1e-14:
        outer = np.vstack([outer, outer[:1]])
    bad = polyline_self_intersections(outer, closed=boundary.closed)
    if bad:
        i = bad[0][0]
        raise GeometryError(
            f"shell of loop {boundary.name!r} self-intersects near {outer[i]} (T={T} too large)"
        )
    return Shell(boundary, outer, float(T), halos, delta)


def _sample_boundary(loops, delta):
    sites, tags, normals = [], [], []
    for loop in loops:
        for c, tg in zip(loop.curves, loop.entity_tags):
            L = arc_length(c, c.t_min, c.t_max)
            n = max(1, int(math.ceil(L / delta - 1e-9)))
            t = arclength_params(c, c.t_min, c.t_max, n)
            pts = c.evaluate(t)
            nrm = np.asarray(c.normal(t))
            for p, q in zip(pts, nrm):
                sites.append(p)
                tags.append(tg)
                normals.append(q)
    sites = np.array(sites)
    normals = np.array(normals)
    # Shared joint points: keep the first occurrence only.
    keep = []
    seen = {}
    for k, p in enumerate(sites):
        key = (round(p[0] / (1e-9 * delta)), round(p[1] / (1e-9 * delta)))
        if key in seen:
            continue
        seen[key] = k
        keep.append(k)
    keep = np.array(keep)
    return sites[keep], [tags[k] for k in keep], normals[keep]


def _circumcenters(pts, simplices):
    a, b, c = pts[simplices[:, 0]], pts[simplices[:, 1]], pts[simplices[:, 2]]
    d = 2 * _cross(b - a, c - a)
    with np.errstate(divide="ignore", invalid="ignore"):
        bb = np.sum((b - a) ** 2, axis=1)
        cc = np.sum((c - a) ** 2, axis=1)
        ux = ((c - a)[:, 1] * bb - (b - a)[:, 1] * cc) / d
        uy = ((b - a)[:, 0] * cc - (c - a)[:, 0] * bb) / d
    center = a + np.stack([ux, uy], axis=1)
    return center, np.hypot(ux, uy)


def approximate_medial(boundary, delta: float, T_max: float) -> list:
    """Medial edges between distinct entities from a sampled Voronoi diagram.

    ``boundary`` may be a single loop or a list of loops.  Voronoi edges
    are the duals of Delaunay edges joining samples of two different
    entities; they are kept where the clearance is at most ``T_max`` and
    both end points lie on the fluid side.
    """
    loops = [boundary] if isinstance(boundary, BoundaryLoop) else list(boundary)
    sites, tags, normals = _sample_boundary(loops, delta)
    centered = sites - sites.mean(axis=0)
    if len(sites) < 3 or np.linalg.matrix_rank(centered, tol=1e-12 * max(1.0, np.abs(centered).max())) < 2:
        raise GeometryError("medial approximation: boundary samples are collinear")
    try:
        tri = Delaunay(sites)
    except QhullError as exc:
        raise GeometryError(f"medial approximation failed: {exc}") from exc
    cc, rad = _circumcenters(sites, tri.simplices)

    def fluid_side(s):
        c = cc[s]
        if not np.all(np.isfinite(c)):
            return False
        v = tri.simplices[s]
        return all(np.dot(c - sites[k], normals[k]) >= -1e-12 for k in v)

    edges: dict = {}
    for s in range(len(tri.simplices)):
        for k in range(3):
            nb = tri.neighbors[s, k]
            if nb <= s:
                continue
            a, b = [v for q, v in enumerate(tri.simplices[s]) if q != k]
            if tags[a] == tags[b]:
                continue
            if not (rad[s] <= T_max and rad[nb] <= T_max):
                continue
            if not (fluid_side(s) and fluid_side(nb)):
                continue
            pair = tuple(sorted((tags[a], tags[b])))
            edges.setdefault(pair, []).append((s, int(nb)))

    result = []
    for pair in sorted(edges):
        adj: dict = {}
        for s, t in edges[pair]:
            adj.setdefault(s, []).append(t)
            adj.setdefault(t, []).append(s)
        used = set()
        # Start chains at ends / branch points, then sweep remaining cycles.
        starts = sorted(v for v in adj if len(adj[v]) != 2) + sorted(adj)
        for v0 in starts:
            for w in sorted(adj[v0]):
                if (min(v0, w), max(v0, w)) in used:
                    continue
                path = [v0, w]
                used.add((min(v0, w), max(v0, w)))
                while len(adj[path[-1]]) == 2:
                    nxt = [u for u in adj[path[-1]] if (min(u, path[-1]), max(u, path[-1])) not in used]
                    if not nxt:
                        break
                    used.add((min(nxt[0], path[-1]), max(nxt[0], path[-1])))
                    path.append(nxt[0])
                pts = cc[path]
                r = rad[path]
                keep = np.ones(len(pts), bool)
                keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-14
                result.append(MedialEdge(pts[keep], pair, r[keep]))
    return result
