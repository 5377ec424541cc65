"""Isoparametric splitting of high-order boundary-layer elements.

A child element is the image of the parent mapping composed with a
sub-map ``f`` of the reference square: its control nodes are
``chi(f(xi_ref))``.  Because ``det d(chi o f) = det d(chi) * J_f`` and
``J_f > 0``, children of a valid parent stay valid and lie on it.

Levels in a direction can differ between the two bounding edges (the
wake, where the progression ratio changes downstream); the sub-map then
blends the two level sets linearly across the element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lagrange
from .errors import ConformalityError, SplitError
from .hocurve import MappingChi
from .mesh import Element, Mesh, NodeWelder, edge_key

__all__ = [
    "LayerSpec",
    "SubelementMap",
    "WakeSplit",
    "layer_levels",
    "wake_ratio_profile",
    "split_element",
    "split_bidirectional",
    "split_boundary_layer",
]


@dataclass(frozen=True)
class LayerSpec:
    """Wall-normal subdivision: ``n`` layers growing by ``r`` away from the wall.

    ``mode`` is "geometric", "uniform" (requires r == 1) or "blended", in
    which case the ratio moves from ``r`` on the start edge to ``r_end``
    on the opposite edge.  ``wall_at_start`` puts the wall at level -1.
    """

    n: int
    r: float = 1.0
    mode: str = "geometric"
    r_end: float | None = None
    axis: int = 1
    wall_at_start: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"layer count must be >= 1, got {self.n}")
        if not self.r > 0:
            raise ValueError(f"progression ratio must be positive, got {self.r}")
        if self.mode not in ("geometric", "uniform", "blended"):
            raise ValueError(f"unknown layer mode {self.mode!r}")
        if self.mode == "uniform" and self.r != 1.0:
            raise ValueError("uniform layers require r == 1")
        if self.mode == "blended" and (self.r_end is None or not self.r_end > 0):
            raise ValueError("blended layers need a positive r_end")


def _geometric_levels(n: int, r: float) -> np.ndarray:
    h = r ** np.arange(n, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(h)])
    return -1.0 + 2.0 * c / c[-1]


def layer_levels(spec, r: float | None = None) -> np.ndarray:
    """Levels -1 = eta_0 < ... < eta_n = 1 for a layer spec.

    ``layer_levels(5, 2.0)`` is shorthand for a geometric spec.  Layer
    heights are proportional to ``r**k`` with ``k = 0`` at the wall.
    For blended specs the start-edge levels are returned.
    """
    if not isinstance(spec, LayerSpec):
        spec = LayerSpec(int(spec), 1.0 if r is None else float(r))
    lv = _geometric_levels(spec.n, spec.r)
    if not spec.wall_at_start:
        lv = -lv[::-1]
    return lv


def _end_levels(spec: LayerSpec) -> np.ndarray:
    if spec.mode != "blended":
        return layer_levels(spec)
    return layer_levels(LayerSpec(spec.n, spec.r_end, "geometric", None, spec.axis, spec.wall_at_start))


def wake_ratio_profile(r_te: float, L_w: float, x: float) -> float:
    """Progression ratio at streamwise distance ``x`` behind the trailing edge.

    Linear from ``r_te`` at the trailing edge to 1 at the end of the wake.
    """
    if r_te < 1:
        raise ValueError(f"trailing-edge ratio must be >= 1, got {r_te}")
    if not (0.0 <= x <= L_w):
        raise ValueError(f"station {x} outside the wake [0, {L_w}]")
    return r_te + (1.0 - r_te) * x / L_w


class SubelementMap:
    """Sub-map of the reference square onto one child.

    Parameters
    ----------
    bounds1 : ((lo at xi2=-1, lo at xi2=+1), (hi at xi2=-1, hi at xi2=+1))
        Child interval in xi_1, possibly varying linearly with xi_2.
    bounds2 : same for xi_2 as a function of xi_1.
    """

    def __init__(self, bounds1, bounds2):
        (self.lo1, self.hi1) = (np.asarray(b, float) for b in bounds1)
        (self.lo2, self.hi2) = (np.asarray(b, float) for b in bounds2)
        if np.any(self.hi1 <= self.lo1) or np.any(self.hi2 <= self.lo2):
            raise SplitError(f"crossed sub-element bounds {bounds1}, {bounds2}")
        # x1 = a1(u1) + b1(u1) * x2 and x2 = a2(u2) + b2(u2) * x1
        self._m1 = (self.lo1.mean(), self.hi1.mean())
        self._d1 = ((self.lo1[1] - self.lo1[0]) / 2, (self.hi1[1] - self.hi1[0]) / 2)
        self._m2 = (self.lo2.mean(), self.hi2.mean())
        self._d2 = ((self.lo2[1] - self.lo2[0]) / 2, (self.hi2[1] - self.hi2[0]) / 2)

    @classmethod
    def affine(cls, a1, b1, a2, b2) -> "SubelementMap":
        return cls(((a1, a1), (b1, b1)), ((a2, a2), (b2, b2)))

    def _coeffs(self, xi):
        u1 = (xi[:, 0] + 1) / 2
        u2 = (xi[:, 1] + 1) / 2
        a1 = self._m1[0] + u1 * (self._m1[1] - self._m1[0])
        b1 = self._d1[0] + u1 * (self._d1[1] - self._d1[0])
        a2 = self._m2[0] + u2 * (self._m2[1] - self._m2[0])
        b2 = self._d2[0] + u2 * (self._d2[1] - self._d2[0])
        return a1, b1, a2, b2

    def __call__(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, float))
        a1, b1, a2, b2 = self._coeffs(xi)
        x1 = (a1 + b1 * a2) / (1 - b1 * b2)
        x2 = a2 + b2 * x1
        return np.stack([x1, x2], axis=1)

    def det(self, xi) -> np.ndarray:
        """J_f at reference points."""
        xi = np.atleast_2d(np.asarray(xi, float))
        _, b1, _, b2 = self._coeffs(xi)
        x = self(xi)
        w1 = (self.hi1[0] - self.lo1[0]) * (1 - x[:, 1]) / 2 + (self.hi1[1] - self.lo1[1]) * (1 + x[:, 1]) / 2
        w2 = (self.hi2[0] - self.lo2[0]) * (1 - x[:, 0]) / 2 + (self.hi2[1] - self.lo2[1]) * (1 + x[:, 0]) / 2
        return (w1 * w2 / 4) / (1 - b1 * b2)


def _levels_pair(levels):
    """Accept one level array or a (start-edge, end-edge) pair."""
    if isinstance(levels, LayerSpec):
        return layer_levels(levels), _end_levels(levels)
    if isinstance(levels, tuple) and len(levels) == 2 and np.ndim(levels[0]) == 1:
        a, b = (np.asarray(x, float) for x in levels)
    else:
        a = b = np.asarray(levels, float)
    for lv in (a, b):
        if len(lv) < 2 or np.any(np.diff(lv) <= 0) or abs(lv[0] + 1) > 1e-14 or abs(lv[-1] - 1) > 1e-14:
            raise ValueError(f"levels must increase strictly from -1 to 1, got {lv}")
    if len(a) != len(b):
        raise ValueError("blended level sets must have equal length")
    return a, b


def _grid_maps(lv1, lv2):
    """Sub-maps for a (n1 x n2) grid; each level pair is (at -1 side, at +1 side)."""
    (s1, e1), (s2, e2) = lv1, lv2
    maps = {}
    for j in range(len(s2) - 1):
        for i in range(len(s1) - 1):
            maps[i, j] = SubelementMap(
                ((s1[i], e1[i]), (s1[i + 1], e1[i + 1])),
                ((s2[j], e2[j]), (s2[j + 1], e2[j + 1])),
            )
    return maps


def _children(chi: MappingChi, maps) -> dict:
    ref = chi.ref_nodes
    return {k: MappingChi(chi.kind, chi.P, chi.evaluate(f(ref)), chi.element_id) for k, f in maps.items()}


_IDENTITY = (np.array([-1.0, 1.0]), np.array([-1.0, 1.0]))


def split_element(chi: MappingChi, levels, axis: int = 1) -> list:
    """Split a quad mapping along one reference axis.

    ``levels`` is a level array, a :class:`LayerSpec`, or a pair of
    arrays for the two bounding edges (blended).  ``axis`` 0 splits in
    xi_1, 1 in xi_2.  Children are ordered from level -1 to +1.
    """
    if chi.kind != "quad":
        raise ValueError("only quads are split")
    pair = _levels_pair(levels)
    lv = (pair, _IDENTITY) if axis == 0 else (_IDENTITY, pair)
    kids = _children(chi, _grid_maps(*lv))
    return [kids[k] for k in sorted(kids, key=lambda ij: (ij[1], ij[0]))]


def split_bidirectional(chi: MappingChi, spec_xi, spec_eta, strip_specs=None, order: str = "xi-first") -> list:
    """Split a junction quad in both directions, one after the other.

    ``strip_specs`` optionally gives the specs of the neighbouring
    boundary-layer strips as ``(xi strip, eta strip)``; any disagreement
    with the supplied specs is a conformality error.  Returns the
    ``n_xi * n_eta`` children ordered by (eta index, xi index).
    """
    if strip_specs is not None:
        for name, mine, theirs in (("xi", spec_xi, strip_specs[0]), ("eta", spec_eta, strip_specs[1])):
            if theirs is None:
                continue
            a, b = _levels_pair(mine), _levels_pair(theirs)
            if len(a[0]) != len(b[0]) or not (np.allclose(a[0], b[0], atol=1e-14) and np.allclose(a[1], b[1], atol=1e-14)):
                raise ConformalityError(f"junction {chi.element_id}: {name} spec disagrees with adjacent strip")
    n_xi = len(_levels_pair(spec_xi)[0]) - 1
    n_eta = len(_levels_pair(spec_eta)[0]) - 1
    out = {}
    if order == "xi-first":
        for i, c in enumerate(split_element(chi, spec_xi, axis=0)):
            for j, g in enumerate(split_element(c, spec_eta, axis=1)):
                out[i, j] = g
    else:
        for j, c in enumerate(split_element(chi, spec_eta, axis=1)):
            for i, g in enumerate(split_element(c, spec_xi, axis=0)):
                out[i, j] = g
    return [out[i, j] for j in range(n_eta) for i in range(n_xi)]


# -- mesh-wide splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class WakeSplit:
    """Cross-flow splitting of wake columns with a downstream-varying ratio.

    Stations are measured along ``axis`` from ``origin`` (the trailing
    edge face midpoint); levels start at the lower side of each column.
    """

    n: int
    r_te: float
    length: float
    origin: tuple = (1.0, 0.0)
    axis: tuple = (1.0, 0.0)

    def station(self, p) -> float:
        x = float(np.dot(np.asarray(p, float) - np.asarray(self.origin, float), self.axis))
        tol = 1e-9 * max(1.0, self.length)
        if -tol <= x < 0:
            x = 0.0
        if self.length < x <= self.length + tol:
            x = self.length
        return x

    def fractions(self, p) -> np.ndarray:
        r = wake_ratio_profile(self.r_te, self.length, self.station(p))
        return (layer_levels(LayerSpec(self.n, r)) + 1) / 2


def _quad_sides(e: Element):
    return [e.side_vertices(k) for k in range(4)]


def _seed_edges(mesh: Mesh, specs, wake: WakeSplit | None):
    """Edge key -> (start vertex, fractions in [0, 1]) before propagation."""
    patch_of = mesh.patch_of_edges()
    seeds: dict = {}

    def put(key, start, frac, where):
        frac = np.asarray(frac, float)
        if key in seeds:
            s0, f0 = seeds[key]
            g = f0 if s0 == start else 1 - f0[::-1]
            if len(g) != len(frac) or np.max(np.abs(g - frac)) > 1e-12:
                raise ConformalityError(f"edge {key}: conflicting layer levels from {where}")
            return
        seeds[key] = (start, frac)

    for ei, e in enumerate(mesh.elements):
        if e.kind != "quad":
            continue
        kind = e.block_kind
        if kind == "loop" and e.wall_side is not None:
            k = e.wall_side
            wall = patch_of.get(edge_key(*e.side_vertices(k)))
            spec = specs.get(wall, specs.get(None)) if isinstance(specs, dict) else specs
            if spec is None:
                continue
            frac = (layer_levels(spec) + 1) / 2
            a, b = e.side_vertices((k + 1) % 4)          # starts at the wall
            put(edge_key(a, b), a, frac, f"element {ei}")
            a, b = e.side_vertices((k + 3) % 4)          # ends at the wall
            put(edge_key(a, b), b, frac, f"element {ei}")
        elif kind == "wake" and wake is not None:
            v = e.vertices
            for lo, hi in ((v[1], v[2]), (v[0], v[3])):
                mid = (mesh.nodes[lo] + mesh.nodes[hi]) / 2
                put(edge_key(lo, hi), int(lo), wake.fractions(mid), f"element {ei}")
    return seeds


def _propagate(mesh: Mesh, seeds: dict):
    """Copy seeds across quads to the opposite side until nothing changes."""
    changed = True
    while changed:
        changed = False
        for ei, e in enumerate(mesh.elements):
            if e.kind != "quad":
                continue
            sides = _quad_sides(e)
            for k in range(4):
                opp = (k + 2) % 4
                a, b = sides[k]
                key, okey = edge_key(a, b), edge_key(*sides[opp])
                if key in seeds and okey not in seeds:
                    start, frac = seeds[key]
                    oa, ob = sides[opp]
                    # side k runs a->b, the opposite side runs ob->oa in the same sense
                    seeds[okey] = (ob if start == a else oa, frac)
                    changed = True
    return seeds


def _direction_levels(e: Element, seeds, d: int, ei: int):
    """(levels on the -1 edge, levels on the +1 edge) for reference direction d."""
    v = [int(x) for x in e.vertices]
    # Edges bounding direction d, each listed from its xi = -1 vertex.
    edges = [(v[0], v[1]), (v[3], v[2])] if d == 0 else [(v[0], v[3]), (v[1], v[2])]
    out = []
    for a, b in edges:
        key = edge_key(a, b)
        if key not in seeds:
            out.append(None)
            continue
        start, frac = seeds[key]
        f = frac if start == a else 1 - frac[::-1]
        out.append(2 * f - 1)
    if out[0] is None and out[1] is None:
        return _IDENTITY
    if out[0] is None or out[1] is None:
        raise ConformalityError(f"element {ei}: levels on only one side in direction {d}")
    if len(out[0]) != len(out[1]):
        raise ConformalityError(f"element {ei}: level counts differ across direction {d}")
    return out[0], out[1]


def _wall_layer(e: Element, i, j, n1, n2):
    ws = e.wall_side
    if ws is None:
        return j
    return {0: j, 2: n2 - 1 - j, 3: i, 1: n1 - 1 - i}[ws]


def split_boundary_layer(mesh: Mesh, specs, wake: WakeSplit | None = None) -> Mesh:
    """Split every structured near-field quad mesh-wide.

    Parameters
    ----------
    specs : LayerSpec or dict
        Per wall patch spec; key ``None`` is the default.
    wake : WakeSplit, optional
        Cross-flow splitting of wake blocks.

    Loop strips are split wall-normal, corner and junction quads inherit
    levels from every neighbouring strip (so junctions split in both
    directions), wake columns are split with blended levels.  Elements
    without levels and triangles are copied unchanged.
    """
    seeds = _propagate(mesh, _seed_edges(mesh, specs, wake))
    welder = NodeWelder(tol=1e-10 * mesh.scale)
    elements = []
    patch_of = mesh.patch_of_edges()
    patches: dict = {name: [] for name in mesh.patches}
    for ei, e in enumerate(mesh.elements):
        chi = MappingChi.from_element(mesh, ei)
        if e.kind != "quad":
            elements.append(Element(e.kind, welder.add_many(chi.nodes), e.block, e.layer, e.wall_side))
            kids = {(0, 0): chi}
            n1 = n2 = 1
        else:
            lv1 = _direction_levels(e, seeds, 0, ei)
            lv2 = _direction_levels(e, seeds, 1, ei)
            try:
                maps = _grid_maps(lv1, lv2)
            except SplitError as exc:
                raise SplitError(f"element {ei} ({e.block}): {exc}") from exc
            n1, n2 = len(lv1[0]) - 1, len(lv2[0]) - 1
            kids = _children(chi, maps)
            for (i, j) in sorted(kids, key=lambda ij: (ij[1], ij[0])):
                ws = e.wall_side
                on_wall = ws is not None and {0: j == 0, 1: i == n1 - 1, 2: j == n2 - 1, 3: i == 0}[ws]
                elements.append(Element("quad", welder.add_many(kids[i, j].nodes), e.block,
                                        _wall_layer(e, i, j, n1, n2), ws if on_wall else None))
        # Boundary patches on the parent's sides are inherited by the children.
        base = len(elements) - len(kids)
        order = sorted(kids, key=lambda ij: (ij[1], ij[0]))
        for k in range(e.n_sides):
            name = patch_of.get(edge_key(*e.side_vertices(k)))
            if name is None:
                continue
            if e.kind != "quad":
                picks = [0]
            else:
                sel = {0: lambda i, j: j == 0, 1: lambda i, j: i == n1 - 1,
                       2: lambda i, j: j == n2 - 1, 3: lambda i, j: i == 0}[k]
                picks = [m for m, ij in enumerate(order) if sel(*ij)]
                if k in (2, 3):
                    picks = picks[::-1]
            for m in picks:
                patches[name].append(tuple(int(x) for x in elements[base + m].side_nodes(k)))
    nodes = welder.array()
    node_geom = {}
    for old, assoc in mesh.node_geom.items():
        new = welder.find(mesh.nodes[old])
        if new is not None:
            node_geom[new] = dict(assoc)
    return Mesh(nodes, elements, patches, node_geom)
