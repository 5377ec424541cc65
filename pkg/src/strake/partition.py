"""Near-field block decomposition (O, C and H topologies).

Every block is a quadrilateral with corners listed counter-clockwise.
Boundary-layer blocks (kind ``loop``) follow one convention: side 0 lies
on the wall, sides 1 and 3 are the wall-normal sides and side 2 is the
outer (skin) side.  Trailing-edge corner, junction and wake blocks are
single quads or, for the wake, a chain of streamwise columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PartitionError
from .geomkit import BoundaryLoop, CurveHandle, Segment
from .medial import Shell, segment_intersections

__all__ = [
    "BlockSide",
    "Block",
    "BlockGraph",
    "WakeParams",
    "build_topology",
    "validate_blocks",
    "wake_columns",
    "wake_clearance",
]

_TOL = 1e-10


@dataclass(frozen=True)
class BlockSide:
    """Geometry attached to one block side.

    ``kind`` is "curve" (an interval of a wall curve), "offset" (the same
    interval displaced by ``offset`` along the left normal) or "line".
    ``patch`` names the boundary the side lies on, if any.
    """

    kind: str = "line"
    curve_id: str | None = None
    t0: float | None = None
    t1: float | None = None
    offset: float = 0.0
    patch: str | None = None


@dataclass
class Block:
    id: str
    kind: str
    corners: np.ndarray
    sides: list
    normal_sides: tuple | None = (1, 3)
    split_plan: dict = field(default_factory=dict)

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float).reshape(4, 2)
        if len(self.sides) != 4:
            raise ValueError("a block has four sides")

    def side_ends(self, k: int):
        return self.corners[k], self.corners[(k + 1) % 4]

    def turns(self) -> np.ndarray:
        c = self.corners
        e = np.roll(c, -1, axis=0) - c
        en = np.roll(e, -1, axis=0)
        return e[:, 0] * en[:, 1] - e[:, 1] * en[:, 0]


@dataclass
class WakeParams:
    length: float = 2.0
    half_angle_deg: float = 3.0
    columns: int = 8
    gap: float | None = None
    growth: float = 1.2

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"wake length must be positive, got {self.length}")
        if self.columns < 1:
            raise ValueError("wake needs at least one column")
        if not self.growth > 0:
            raise ValueError("wake growth must be positive")


@dataclass
class BlockGraph:
    blocks: list
    adjacency: dict
    topology: str
    wake_params: WakeParams | None
    curves: dict
    thickness: float
    wall_shells: list = field(default_factory=list)
    wake_axis: tuple | None = None
    domain: tuple | None = None

    def block(self, bid: str) -> Block:
        for b in self.blocks:
            if b.id == bid:
                return b
        raise KeyError(bid)

    def count(self, kind: str) -> int:
        return sum(b.kind == kind for b in self.blocks)


# -- side geometry ------------------------------------------------------------------

def side_points(graph_or_curves, block: Block, k: int, fractions=None) -> np.ndarray:
    """Points along side k at parameter fractions (default: 9 samples)."""
    curves = graph_or_curves.curves if isinstance(graph_or_curves, BlockGraph) else graph_or_curves
    f = np.linspace(0.0, 1.0, 9) if fractions is None else np.asarray(fractions, float)
    s = block.sides[k]
    a, b = block.side_ends(k)
    if s.kind == "line":
        return a[None] + f[:, None] * (b - a)[None]
    c = curves[s.curve_id]
    t = s.t0 + f * (s.t1 - s.t0)
    p = c.evaluate(t)
    if s.kind == "offset":
        p = p + s.offset * np.asarray(c.normal(t))
    return p


def _side_key(a, b):
    pa = (round(a[0] / 1e-9), round(a[1] / 1e-9))
    pb = (round(b[0] / 1e-9), round(b[1] / 1e-9))
    return (pa, pb) if pa <= pb else (pb, pa)


def _adjacency(blocks) -> dict:
    by_key: dict = {}
    for b in blocks:
        for k in range(4):
            by_key.setdefault(_side_key(*b.side_ends(k)), []).append((b.id, k))
    adj = {}
    for owners in by_key.values():
        if len(owners) == 2:
            adj[owners[0]] = owners[1]
            adj[owners[1]] = owners[0]
    return adj


# -- distances ----------------------------------------------------------------------

def _points_to_segments(pts, A, B):
    """Distance from each point to the nearest of the segments A[j]B[j]."""
    ab = B - A
    L2 = np.einsum("ij,ij->i", ab, ab)
    L2 = np.where(L2 == 0, 1.0, L2)
    best = np.full(len(pts), np.inf)
    for lo in range(0, len(pts), 256):
        p = pts[lo:lo + 256, None, :]
        u = np.clip(np.einsum("pjk,jk->pj", p - A[None], ab) / L2, 0.0, 1.0)
        d = np.linalg.norm(p - (A[None] + u[..., None] * ab[None]), axis=2)
        best[lo:lo + 256] = d.min(axis=1)
    return best


def _polyline_distance(P, Q):
    """Minimum distance between two open polylines (0 if they cross)."""
    P, Q = np.asarray(P, float), np.asarray(Q, float)
    if segment_intersections(P, Q):
        return 0.0
    return float(min(_points_to_segments(P, Q[:-1], Q[1:]).min(),
                     _points_to_segments(Q, P[:-1], P[1:]).min()))


def wake_clearance(graph: BlockGraph) -> float:
    """Minimum distance between wake block sides and every wall shell."""
    best = math.inf
    wakes = [b for b in graph.blocks if b.kind == "wake"]
    for shell in graph.wall_shells:
        outer = np.asarray(shell.outer, float)
        for b in wakes:
            for k in range(4):
                best = min(best, _polyline_distance(np.vstack(b.side_ends(k)), outer))
    return best


# -- aerofoil topologies --------------------------------------------------------------

def wake_columns(params: WakeParams) -> np.ndarray:
    """Streamwise stations 0 = x_0 < ... < x_m = L of the wake columns."""
    m, g, L = params.columns, params.growth, params.length
    if abs(g - 1.0) < 1e-12:
        return L * np.arange(m + 1) / m
    return L * (g ** np.arange(m + 1) - 1.0) / (g**m - 1.0)


def _aerofoil_roles(loop: BoundaryLoop):
    up = lo = te = None
    for c in loop.curves:
        if c.id.endswith("-upper"):
            up = c
        elif c.id.endswith("-lower"):
            lo = c
        elif c.id.endswith("-te"):
            te = c
    if up is None or lo is None:
        raise PartitionError(f"loop {loop.name!r} is not an aerofoil (needs -upper and -lower curves)")
    return up, te, lo


def _loop_block(bid, curve: CurveHandle, T, patch, t0=None, t1=None, outer_line=False):
    t0 = curve.t_start if t0 is None else t0
    t1 = curve.t_end if t1 is None else t1
    w0, w1 = curve.evaluate(t0), curve.evaluate(t1)
    o0 = w0 + T * np.asarray(curve.normal(t0))
    o1 = w1 + T * np.asarray(curve.normal(t1))
    outer = BlockSide("line") if outer_line else BlockSide("offset", curve.id, t1, t0, T)
    return Block(bid, "loop", [w0, w1, o1, o0],
                 [BlockSide("curve", curve.id, t0, t1, 0.0, patch), BlockSide(), outer, BlockSide()])


def _aerofoil_blocks(shell: Shell, topology: str, wake: WakeParams | None):
    loop = shell.inner
    T = shell.thickness
    up, te, lo = _aerofoil_roles(loop)
    wall = f"wall:{loop.name}"
    blocks = [_loop_block("loop:upper", up, T, wall), _loop_block("loop:lower", lo, T, wall)]
    Ku, Kl = up.evaluate(up.t_end), lo.evaluate(lo.t_start)
    nU, nL = np.asarray(up.normal(up.t_end)), np.asarray(lo.normal(lo.t_start))
    E2u, E2l = Ku + T * nU, Kl + T * nL
    if te is None:
        if topology != "O":
            raise PartitionError(f"{topology}-topology needs a squared trailing edge")
        return blocks, None
    e = np.asarray(te.normal(0.5))           # out of the trailing-edge face
    if topology == "O":
        M = te.evaluate(0.5)
        B = M + T * e
        blocks.append(Block("loop:te-upper", "loop", [Ku, M, B, E2u],
                            [BlockSide("curve", te.id, 0.0, 0.5, 0.0, wall), BlockSide(), BlockSide(), BlockSide()]))
        blocks.append(Block("loop:te-lower", "loop", [M, Kl, E2l, B],
                            [BlockSide("curve", te.id, 0.5, 1.0, 0.0, wall), BlockSide(), BlockSide(), BlockSide()]))
        return blocks, None
    if topology == "C":
        blocks.append(_loop_block("loop:te", te, T, wall, outer_line=True))
        blocks.append(Block("te-corner:upper", "te-corner", [Ku, Ku + T * e, Ku + T * e + T * nU, E2u],
                            [BlockSide()] * 4, None))
        blocks.append(Block("te-corner:lower", "te-corner", [Kl, E2l, Kl + T * e + T * nL, Kl + T * e],
                            [BlockSide()] * 4, None))
        return blocks, None
    # H: wake columns behind the face, widening linearly with distance.
    if wake is None:
        raise PartitionError("H-topology needs wake parameters")
    xs = wake_columns(wake)
    f = (Ku - Kl) / np.linalg.norm(Ku - Kl)
    tan_a = math.tan(math.radians(wake.half_angle_deg))

    def lower(x):
        return Kl + x * e - x * tan_a * f

    def upper(x):
        return Ku + x * e + x * tan_a * f

    for j in range(wake.columns):
        x0, x1 = xs[j], xs[j + 1]
        sides = [BlockSide(), BlockSide(), BlockSide(), BlockSide()]
        if j == 0:
            sides[3] = BlockSide("curve", te.id, 0.0, 1.0, 0.0, wall)
        if j == wake.columns - 1:
            sides[1] = BlockSide(patch="wake-end")
        blocks.append(Block(f"wake:{j}", "wake", [lower(x0), lower(x1), upper(x1), upper(x0)], sides, (0, 2)))
    W1u, W1l = upper(xs[1]), lower(xs[1])
    du = (W1u - Ku) / np.linalg.norm(W1u - Ku)
    dl = (W1l - Kl) / np.linalg.norm(W1l - Kl)
    nwu = np.array([-du[1], du[0]])          # left of the upper wake side: away from the wake
    nwl = np.array([dl[1], -dl[0]])          # right of the lower wake side
    blocks.append(Block("te-corner:upper", "te-corner", [Ku, W1u, W1u + T * nwu, E2u], [BlockSide()] * 4, None))
    blocks.append(Block("te-corner:lower", "te-corner", [Kl, E2l, W1l + T * nwl, W1l], [BlockSide()] * 4, None))
    mid = 0.5 * (Ku + Kl)
    return blocks, (tuple(mid), tuple(e))


# -- corner (junction) topology -----------------------------------------------------

def _corner_blocks(shell: Shell, junction_edges):
    """Two wall strips meeting at a concave corner plus one junction block."""
    loop = shell.inner
    T = shell.thickness
    if len(loop.curves) != 2 or len(shell.halos) != 1:
        raise PartitionError(
            f"junction partition expects two walls and one halo, got {len(loop.curves)} walls "
            f"and {len(shell.halos)} halos"
        )
    a, b = loop.curves
    halo = shell.halos[0].position
    corner = a.evaluate(a.t_end)
    if junction_edges:
        best = min(_polyline_distance(np.vstack([halo, halo]), np.asarray(m.polyline)) for m in junction_edges)
        if best > 2 * shell.spacing + 1e-12:
            raise PartitionError(f"halo {halo} is {best:.3e} away from the medial edges")
    ta, _ = a.project(halo)
    tb, _ = b.project(halo)
    foot_a, foot_b = a.evaluate(ta), b.evaluate(tb)
    wall = f"wall:{loop.name}"
    blocks = [
        _loop_block(f"loop:{a.id}", a, T, wall, a.t_start, ta),
        _loop_block(f"loop:{b.id}", b, T, wall, tb, b.t_end),
        Block("junction:0", "junction", [corner, foot_b, halo, foot_a],
              [BlockSide("curve", b.id, b.t_start, tb, 0.0, wall), BlockSide(), BlockSide(),
               BlockSide("curve", a.id, ta, a.t_end, 0.0, wall)], None),
    ]
    return blocks


def _ground_block(shell: Shell):
    loop = shell.inner
    (c,) = loop.curves
    return _loop_block(f"loop:{loop.name}", c, shell.thickness, f"wall:{loop.name}")


def _mark_outer(blocks, curves, domain):
    """Tag block sides lying on the domain box with the 'outer' patch."""
    if domain is None:
        return
    xmin, xmax, ymin, ymax = domain
    tol = 1e-10 * max(xmax - xmin, ymax - ymin)
    for b in blocks:
        for k in range(4):
            s = b.sides[k]
            if s.patch is not None:
                continue
            p, q = b.side_ends(k)
            for axis, v in ((0, xmin), (0, xmax), (1, ymin), (1, ymax)):
                if abs(p[axis] - v) <= tol and abs(q[axis] - v) <= tol:
                    b.sides[k] = BlockSide(s.kind, s.curve_id, s.t0, s.t1, s.offset, "outer")


def build_topology(shell: Shell, topology: str = "H", wake: WakeParams | None = None,
                   junction_edges=None, wall_shells=(), domain=None) -> BlockGraph:
    """Block graph for an aerofoil (O, C, H) or a concave-corner junction.

    Parameters
    ----------
    shell : Shell
        Shell of the body loop.
    topology : {"O", "C", "H"}
    wake : WakeParams
        Required for H; ``wake.gap`` switches on the wall clearance check.
    junction_edges : list of MedialEdge, optional
        Used to confirm the halo position of a concave corner.
    wall_shells : sequence of Shell
        Extra straight walls (e.g. a ground plane) with their own strip.
    domain : (xmin, xmax, ymin, ymax), optional
        Block sides on this box are tagged ``outer``.
    """
    if topology not in ("O", "C", "H"):
        raise ValueError(f"topology must be O, C or H, got {topology!r}")
    loop = shell.inner
    curves = {c.id: c for c in loop.curves}
    axis = None
    if loop.closed:
        blocks, axis = _aerofoil_blocks(shell, topology, wake if topology == "H" else None)
    else:
        if topology != "C":
            raise PartitionError(f"junction configuration supports C topology only, got {topology}")
        blocks = _corner_blocks(shell, junction_edges)
    for ws in wall_shells:
        blocks.append(_ground_block(ws))
        curves.update({c.id: c for c in ws.inner.curves})
    _mark_outer(blocks, curves, domain)
    graph = BlockGraph(blocks, _adjacency(blocks), topology, wake if topology == "H" else None,
                       curves, shell.thickness, list(wall_shells), axis, domain)
    problems = validate_blocks(graph)
    if problems:
        raise PartitionError("; ".join(problems))
    return graph


# -- validation ------------------------------------------------------------------------

def validate_blocks(g: BlockGraph) -> list:
    """All violated block-graph invariants as messages (empty when valid)."""
    out = []
    for b in g.blocks:
        t = b.turns()
        if not (np.all(t > 0) or np.all(t < 0)):
            out.append(f"block {b.id}: corner quadrilateral is not strictly convex")
        elif np.all(t < 0):
            out.append(f"block {b.id}: corners are clockwise")
        for k, s in enumerate(b.sides):
            if s.kind in ("curve", "offset") and s.curve_id not in g.curves:
                out.append(f"block {b.id} side {k}: unknown entity {s.curve_id!r}")
    by_key: dict = {}
    for b in g.blocks:
        for k in range(4):
            by_key.setdefault(_side_key(*b.side_ends(k)), []).append((b, k))
    for owners in by_key.values():
        if len(owners) > 2:
            names = ", ".join(f"{b.id}:{k}" for b, k in owners)
            out.append(f"side shared by {len(owners)} blocks: {names}")
        elif len(owners) == 2:
            (b1, k1), (b2, k2) = owners
            try:
                p = side_points(g, b1, k1)
                q = side_points(g, b2, k2)[::-1]
                gap = float(np.max(np.linalg.norm(p - q, axis=1)))
            except KeyError:
                continue
            if gap > _TOL:
                out.append(f"blocks {b1.id}:{k1} and {b2.id}:{k2} do not coincide (gap {gap:.3e})")
    for key, val in g.adjacency.items():
        if g.adjacency.get(val) != key:
            out.append(f"adjacency of {key[0]}:{key[1]} is not symmetric")
    if g.wake_params is not None and g.wake_params.gap is not None and g.wall_shells:
        clearance = wake_clearance(g)
        if clearance < g.wake_params.gap - 1e-9:
            out.append(f"wake clearance {clearance:.6g} below demanded gap {g.wake_params.gap:.6g}")
    for ws in g.wall_shells:
        outer = np.asarray(ws.outer, float)
        for b in g.blocks:
            if b.kind == "wake" or b.id == f"loop:{ws.inner.name}":
                continue
            for k in range(4):
                try:
                    pts = side_points(g, b, k)
                except KeyError:
                    continue
                if _polyline_distance(pts, outer) <= 0.0:
                    out.append(f"block {b.id} overlaps the shell of {ws.inner.name!r}")
                    break
    return out
