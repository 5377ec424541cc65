"""Coarse linear near-field mesh, built bottom-up from the block graph.

Block sides are discretised first, once per geometric side, then each
block is filled.  Boundary-layer blocks get a single element through the
thickness; corner, junction and wake blocks are one quad each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConformalityError, SizingError
from .geomkit import arclength_params
from .mesh import Element, Mesh, NodeWelder, edge_key
from .partition import BlockGraph, _side_key, side_points

__all__ = [
    "SideDiscretization",
    "ConformalityReport",
    "mesh_sides",
    "sweep_blocks",
    "build_linear_mesh",
    "conformality_check",
]

SKIN = "skin"


@dataclass
class SideDiscretization:
    """Nodes of one block side, listed from corner k to corner k+1."""

    key: tuple
    points: np.ndarray
    params: np.ndarray | None = None
    curve_id: str | None = None
    law: str = "uniform"

    @property
    def intervals(self) -> int:
        return len(self.points) - 1


def _side_length(g: BlockGraph, block, k: int) -> float:
    s = block.sides[k]
    if s.kind == "line":
        a, b = block.side_ends(k)
        return float(np.linalg.norm(b - a))
    c = g.curves[s.curve_id]
    lo, hi = sorted((s.t0, s.t1))
    arc = c.arc_length(lo, hi)
    if s.kind == "offset":
        pts = side_points(g, block, k, np.linspace(0, 1, 65))
        arc = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    return arc


def _wall_count(g, block, h) -> int:
    return max(1, int(math.ceil(_side_length(g, block, 0) / h - 1e-9)))


def mesh_sides(g: BlockGraph, h: float, h_walls: dict | None = None) -> dict:
    """Discretise every block side once.

    Wall sides of boundary-layer blocks get ``ceil(arc / h)`` intervals
    at equal arc length (``h_walls`` overrides ``h`` per wall patch) and
    their outer side mirrors them; every other side gets one interval.
    Returns ``{(block id, side): SideDiscretization}``; both owners of a
    shared side map to the same object with the owner's orientation.
    """
    if not h > 0:
        raise SizingError(f"target edge length must be positive, got {h}")
    longest = max(_side_length(g, b, k) for b in g.blocks for k in range(4))
    if h > longest:
        raise SizingError(f"target edge length {h} exceeds the longest block side {longest:.6g}")
    h_walls = h_walls or {}
    counts: dict = {}
    for b in g.blocks:
        if b.kind == "loop":
            n = _wall_count(g, b, h_walls.get(b.sides[0].patch, h))
            want = (n, 1, n, 1)
        else:
            want = (1, 1, 1, 1)
        for k in range(4):
            key = _side_key(*b.side_ends(k))
            prev = counts.get(key)
            if prev is not None and prev[0] != want[k]:
                raise ConformalityError(
                    f"side {b.id}:{k} needs {want[k]} intervals but {prev[1]} needs {prev[0]}"
                )
            counts[key] = (want[k], f"{b.id}:{k}")

    out: dict = {}
    shared: dict = {}
    for b in g.blocks:
        wall = None
        for k in (0, 1, 2, 3):
            key = _side_key(*b.side_ends(k))
            n = counts[key][0]
            if key in shared:
                other = shared[key]
                out[b.id, k] = SideDiscretization((b.id, k), other.points[::-1].copy(),
                                                  None if other.params is None else other.params[::-1].copy(),
                                                  other.curve_id, other.law)
                if k == 0:
                    wall = out[b.id, k]
                continue
            s = b.sides[k]
            a, e = b.side_ends(k)
            if s.kind == "curve":
                c = g.curves[s.curve_id]
                lo, hi = sorted((s.t0, s.t1))
                t = arclength_params(c, lo, hi, n)
                if s.t0 > s.t1:
                    t = t[::-1]
                t[0], t[-1] = s.t0, s.t1
                d = SideDiscretization((b.id, k), c.evaluate(t), t, c.id, "arc-length")
                pts = d.points
                pts[0], pts[-1] = a, e
            elif s.kind == "offset" and wall is not None and wall.params is not None:
                c = g.curves[s.curve_id]
                t = wall.params[::-1]
                pts = c.evaluate(t) + s.offset * np.asarray(c.normal(t))
                pts[0], pts[-1] = a, e
                d = SideDiscretization((b.id, k), pts, None, None, "offset")
            elif wall is not None and n == wall.intervals and n > 1:
                w = wall.points
                frac = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(w, axis=0), axis=1))])
                frac = 1.0 - (frac / frac[-1])[::-1]
                d = SideDiscretization((b.id, k), a[None] + frac[:, None] * (e - a)[None])
            else:
                f = np.linspace(0.0, 1.0, n + 1)
                d = SideDiscretization((b.id, k), a[None] + f[:, None] * (e - a)[None])
            out[b.id, k] = d
            shared[key] = d
            if k == 0:
                wall = d
    return out


def sweep_blocks(g: BlockGraph, sides: dict) -> Mesh:
    """Fill every block with quads between its side 0 and side 2 nodes."""
    scale = max(float(np.ptp(np.vstack([b.corners for b in g.blocks]), axis=0).max()), 1.0)
    welder = NodeWelder(tol=1e-10 * scale)
    node_geom: dict = {}
    elements = []
    patches: dict = {}

    def add_side(d: SideDiscretization):
        ids = welder.add_many(d.points)
        if d.params is not None:
            for i, t in zip(ids, d.params):
                node_geom.setdefault(int(i), {})[d.curve_id] = float(t)
        return ids

    for b in g.blocks:
        s0, s2 = sides[b.id, 0], sides[b.id, 2]
        if s0.intervals != s2.intervals:
            raise ConformalityError(f"block {b.id}: {s0.intervals} wall intervals vs {s2.intervals} outer")
        s1, s3 = sides[b.id, 1], sides[b.id, 3]
        if s1.intervals != 1 or s3.intervals != 1:
            raise ConformalityError(f"block {b.id}: normal sides must have one interval")
        w = add_side(s0)
        o = add_side(s2)[::-1]
        add_side(s1)
        add_side(s3)
        n = s0.intervals
        first = len(elements)
        ws = 0 if b.kind == "loop" else None
        for k in range(n):
            elements.append(Element("quad", [w[k], w[k + 1], o[k + 1], o[k]], b.id, 0, ws))
        for k in range(4):
            patch = b.sides[k].patch
            if patch is None:
                continue
            owners = range(first, first + n) if k in (0, 2) else [first + n - 1 if k == 1 else first]
            if k == 2:
                owners = reversed(list(owners))
            for ei in owners:
                patches.setdefault(patch, []).append(tuple(int(v) for v in elements[ei].side_vertices(k)))
    mesh = Mesh(welder.array(), elements, patches, node_geom)
    tagged = set(mesh.patch_of_edges())
    skin = []
    for key, (ei, k) in mesh.boundary_edges():
        if key not in tagged:
            skin.append(tuple(int(v) for v in mesh.elements[ei].side_vertices(k)))
    if skin:
        mesh.patches[SKIN] = skin
    mesh.patches = {k: mesh.patches[k] for k in sorted(mesh.patches)}
    return mesh


def build_linear_mesh(g: BlockGraph, h: float, h_walls: dict | None = None) -> Mesh:
    return sweep_blocks(g, mesh_sides(g, h, h_walls))


@dataclass
class ConformalityReport:
    histogram: dict = field(default_factory=dict)
    incidence_violations: list = field(default_factory=list)
    welding_violations: list = field(default_factory=list)
    jacobian_violations: list = field(default_factory=list)
    sequence_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.incidence_violations or self.welding_violations
                    or self.jacobian_violations or self.sequence_violations)

    @property
    def n_violations(self) -> int:
        return (len(self.incidence_violations) + len(self.welding_violations)
                + len(self.jacobian_violations) + len(self.sequence_violations))

    @property
    def interior_edges(self) -> int:
        return self.histogram.get(2, 0)

    @property
    def boundary_edges(self) -> int:
        return self.histogram.get(1, 0)


def conformality_check(m: Mesh, tol: float = 1e-12) -> ConformalityReport:
    """Edge incidence, node welding, vertex Jacobian signs and shared-edge node sequences."""
    rep = ConformalityReport()
    emap = m.edge_map()
    for key, inc in emap.items():
        rep.histogram[len(inc)] = rep.histogram.get(len(inc), 0) + 1
        if len(inc) > 2:
            rep.incidence_violations.append((key, len(inc)))
        elif len(inc) == 2:
            (e1, k1), (e2, k2) = inc
            a = list(m.elements[e1].side_nodes(k1))
            b = list(m.elements[e2].side_nodes(k2))[::-1]
            if a != b:
                rep.sequence_violations.append(key)
    rep.histogram = dict(sorted(rep.histogram.items()))
    if len(m.nodes) > 1:
        used = np.unique(np.concatenate([e.nodes for e in m.elements])) if m.elements else np.arange(len(m.nodes))
        tree = cKDTree(m.nodes[used])
        for i, j in sorted(tree.query_pairs(tol * m.scale)):
            rep.welding_violations.append((int(used[i]), int(used[j])))
    for ei, e in enumerate(m.elements):
        v = m.nodes[e.vertices]
        nxt, prv = np.roll(v, -1, axis=0) - v, np.roll(v, 1, axis=0) - v
        cr = nxt[:, 0] * prv[:, 1] - nxt[:, 1] * prv[:, 0]
        if np.any(cr <= 0):
            rep.jacobian_violations.append(ei)
    return rep
