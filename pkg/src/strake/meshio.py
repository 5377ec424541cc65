"""Mesh persistence and reports: Gmsh MSH 4.1 (text), VTK XML, JSON quality.

Node ordering
-------------
Internal and Gmsh orderings agree on vertices and edge nodes (edges
0-1, 1-2, 2-3(, 3-0) in edge direction).  Interior nodes differ: Gmsh
orders them recursively as a smaller element of the same shape, the
internal order is row by row.  :func:`gmsh_permutation` gives, for each
Gmsh position, the internal local index.

VTK Lagrange quads list edge 2 from vertex 3 to 2 and edge 3 from 0 to
3, then interior nodes row by row; VTK Lagrange triangles use the same
recursive interior as Gmsh.
"""

from __future__ import annotations

import json
import os
import tempfile
from functools import lru_cache
from xml.sax.saxutils import escape

import numpy as np

from . import lagrange
from .errors import ExportError, MeshParseError
from .mesh import Element, Mesh, edge_key, is_wall_patch
from .runspec import RunSpec, load_runspec  # noqa: F401  (re-exported)

__all__ = [
    "gmsh_permutation",
    "vtk_permutation",
    "gmsh_type",
    "write_msh",
    "read_msh",
    "write_vtk",
    "quality_report",
    "first_layer_heights",
    "load_runspec",
]

_GMSH_QUAD = {1: 3, 2: 10, 3: 36, 4: 37, 5: 38, 6: 47, 7: 48, 8: 49, 9: 50, 10: 51}
_GMSH_TRI = {1: 2, 2: 9, 3: 21, 4: 23, 5: 25, 6: 42, 7: 43, 8: 44, 9: 45, 10: 46}
_GMSH_LINE = {1: 1, 2: 8, 3: 26, 4: 27, 5: 28, 6: 62, 7: 63, 8: 64, 9: 65, 10: 66}
_GMSH_KIND = {}
for _P, _t in _GMSH_QUAD.items():
    _GMSH_KIND[_t] = ("quad", _P)
for _P, _t in _GMSH_TRI.items():
    _GMSH_KIND[_t] = ("tri", _P)
for _P, _t in _GMSH_LINE.items():
    _GMSH_KIND[_t] = ("line", _P)


def gmsh_type(kind: str, P: int) -> int:
    table = {"quad": _GMSH_QUAD, "tri": _GMSH_TRI, "line": _GMSH_LINE}[kind]
    if P not in table:
        raise ExportError(f"no Gmsh element type for {kind} of order {P}")
    return table[P]


def _recursive_quad(P: int, o: int = 0) -> list:
    if P == 0:
        return [(o, o)]
    pts = [(o, o), (o + P, o), (o + P, o + P), (o, o + P)]
    pts += [(o + k, o) for k in range(1, P)]
    pts += [(o + P, o + k) for k in range(1, P)]
    pts += [(o + P - k, o + P) for k in range(1, P)]
    pts += [(o, o + P - k) for k in range(1, P)]
    if P >= 2:
        pts += _recursive_quad(P - 2, o + 1)
    return pts


def _recursive_tri(P: int, o: int = 0) -> list:
    if P == 0:
        return [(o, o)]
    pts = [(o, o), (o + P, o), (o, o + P)]
    pts += [(o + k, o) for k in range(1, P)]
    pts += [(o + P - k, o + k) for k in range(1, P)]
    pts += [(o, o + P - k) for k in range(1, P)]
    if P >= 3:
        pts += _recursive_tri(P - 3, o + 1)
    return pts


def _perm(lattice_internal, lattice_other) -> np.ndarray:
    index = {tuple(int(v) for v in ij): k for k, ij in enumerate(lattice_internal)}
    return np.array([index[ij] for ij in lattice_other], dtype=np.int64)


@lru_cache(maxsize=None)
def gmsh_permutation(kind: str, P: int) -> tuple:
    """perm[g] = internal local index of the node at Gmsh position g."""
    if kind == "line":
        return tuple(range(P + 1))
    other = _recursive_quad(P) if kind == "quad" else _recursive_tri(P)
    return tuple(int(v) for v in _perm(lagrange.lattice(kind, P), other))


@lru_cache(maxsize=None)
def vtk_permutation(kind: str, P: int) -> tuple:
    """perm[v] = internal local index of the node at VTK position v."""
    if kind == "tri":
        return gmsh_permutation("tri", P)
    pts = [(0, 0), (P, 0), (P, P), (0, P)]
    pts += [(k, 0) for k in range(1, P)]
    pts += [(P, k) for k in range(1, P)]
    pts += [(k, P) for k in range(1, P)]
    pts += [(0, k) for k in range(1, P)]
    pts += [(i, j) for j in range(1, P) for i in range(1, P)]
    return tuple(int(v) for v in _perm(lagrange.quad_lattice(P), pts))


def _atomic_write(path, text: str):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g(x: float) -> str:
    return repr(float(x)) if x != 0 else "0"


def _bbox(pts):
    if len(pts) == 0:
        return [0.0] * 6
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return [lo[0], lo[1], 0.0, hi[0], hi[1], 0.0]


# -- MSH 4.1 -------------------------------------------------------------------------------

def write_msh(m: Mesh, path) -> None:
    """Write ``m`` as a Gmsh MSH 4.1 text file (atomically).

    Patches become physical curves made of line elements; blocks become
    physical surfaces.  Node tags are 1-based node indices.
    """
    P = m.order if m.elements else 1
    patch_names = sorted(m.patches)
    block_names = sorted({e.block for e in m.elements})
    out = ["$MeshFormat", "4.1 0 8", "$EndMeshFormat"]
    out.append("$PhysicalNames")
    out.append(str(len(patch_names) + len(block_names)))
    for i, n in enumerate(patch_names, 1):
        out.append(f'1 {i} "{n}"')
    for i, n in enumerate(block_names, 1):
        out.append(f'2 {i} "{n}"')
    out.append("$EndPhysicalNames")

    out.append("$Entities")
    out.append(f"0 {len(patch_names)} {len(block_names)} 0")
    for i, n in enumerate(patch_names, 1):
        ids = sorted({int(v) for s in m.patches[n] for v in s})
        bb = " ".join(_g(v) for v in _bbox(m.nodes[ids]))
        out.append(f"{i} {bb} 1 {i} 0")
    for i, n in enumerate(block_names, 1):
        ids = sorted({int(v) for e in m.elements if e.block == n for v in e.nodes})
        bb = " ".join(_g(v) for v in _bbox(m.nodes[ids]))
        out.append(f"{i} {bb} 1 {i} 0")
    out.append("$EndEntities")

    N = len(m.nodes)
    out.append("$Nodes")
    if N:
        out.append(f"1 {N} 1 {N}")
        out.append(f"2 {1 if block_names else 0} 0 {N}")
        out.extend(str(k + 1) for k in range(N))
        out.extend(f"{_g(x)} {_g(y)} 0" for x, y in m.nodes)
    else:
        out.append("0 0 0 0")
    out.append("$EndNodes")

    # Surface elements keep their mesh index as tag; patch lines follow.
    blocks = []
    for i, n in enumerate(block_names, 1):
        for kind in ("quad", "tri"):
            els = [(k, e) for k, e in enumerate(m.elements) if e.block == n and e.kind == kind]
            if not els:
                continue
            perm = list(gmsh_permutation(kind, P))
            blocks.append((2, i, gmsh_type(kind, P), [(k + 1, list(e.nodes[perm])) for k, e in els]))
    tag = len(m.elements) + 1
    for i, n in enumerate(patch_names, 1):
        seqs = m.patches[n]
        if seqs:
            order = len(seqs[0]) - 1
            blocks.append((1, i, gmsh_type("line", order), [(tag + j, list(s)) for j, s in enumerate(seqs)]))
            tag += len(seqs)
    total = sum(len(b[3]) for b in blocks)
    out.append("$Elements")
    out.append(f"{len(blocks)} {total} {1 if total else 0} {total}")
    for dim, ent, typ, conns in blocks:
        out.append(f"{dim} {ent} {typ} {len(conns)}")
        for t, c in conns:
            out.append(f"{t} " + " ".join(str(int(v) + 1) for v in c))
    out.append("$EndElements")
    _atomic_write(path, "\n".join(out) + "\n")


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.i = 0
        self.section = None

    def next(self) -> str:
        while self.i < len(self.lines):
            line = self.lines[self.i].strip()
            self.i += 1
            if line:
                return line
        raise MeshParseError(f"unexpected end of file in section {self.section or 'header'} "
                             f"(line {self.i})")

    def ints(self, n=None):
        line = self.next()
        try:
            vals = [int(v) for v in line.split()]
        except ValueError:
            raise MeshParseError(f"line {self.i}: expected integers in {self.section}, got {line!r}") from None
        if n is not None and len(vals) < n:
            raise MeshParseError(f"line {self.i}: expected {n} integers in {self.section}")
        return vals

    def expect(self, token: str):
        line = self.next()
        if line != token:
            raise MeshParseError(f"line {self.i}: expected {token!r}, found {line!r}")


def read_msh(path) -> Mesh:
    """Read a MSH 4.1 text file written by :func:`write_msh` (or equivalent)."""
    try:
        with open(path) as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshParseError(f"cannot read {path}: {exc}") from exc
    L = _Lines(text)
    names = {1: {}, 2: {}}
    ent_phys = {1: {}, 2: {}}
    nodes_by_tag: dict = {}
    raw_elements = []
    seen_format = False
    while L.i < len(L.lines):
        try:
            head = L.next()
        except MeshParseError:
            break
        if not head.startswith("$") or head.startswith("$End"):
            raise MeshParseError(f"line {L.i}: malformed section header {head!r}")
        L.section = head[1:]
        if head == "$MeshFormat":
            parts = L.next().split()
            if len(parts) < 3 or parts[0] != "4.1" or parts[1] != "0":
                raise MeshParseError(f"line {L.i}: unsupported format {' '.join(parts)!r}")
            seen_format = True
            L.expect("$EndMeshFormat")
        elif head == "$PhysicalNames":
            (n,) = L.ints(1)[:1]
            for _ in range(n):
                line = L.next()
                parts = line.split(maxsplit=2)
                if len(parts) < 3:
                    raise MeshParseError(f"line {L.i}: malformed physical name {line!r}")
                names.setdefault(int(parts[0]), {})[int(parts[1])] = parts[2].strip().strip('"')
            L.expect("$EndPhysicalNames")
        elif head == "$Entities":
            counts = L.ints(4)
            for dim, cnt in enumerate(counts[:4]):
                for _ in range(cnt):
                    parts = L.next().split()
                    try:
                        tag = int(parts[0])
                        if dim == 0:
                            npt = int(parts[4])
                            phys = [int(v) for v in parts[5:5 + npt]]
                        else:
                            npt = int(parts[7])
                            phys = [int(v) for v in parts[8:8 + npt]]
                    except (ValueError, IndexError):
                        raise MeshParseError(f"line {L.i}: malformed entity record") from None
                    ent_phys.setdefault(dim, {})[tag] = phys
            L.expect("$EndEntities")
        elif head == "$Nodes":
            nb, total, _, _ = L.ints(4)[:4]
            for _ in range(nb):
                _, _, parametric, cnt = L.ints(4)[:4]
                if parametric:
                    raise MeshParseError(f"line {L.i}: parametric nodes are not supported")
                tags = [L.ints(1)[0] for _ in range(cnt)]
                for t in tags:
                    line = L.next()
                    try:
                        x, y = (float(v) for v in line.split()[:2])
                    except ValueError:
                        raise MeshParseError(f"line {L.i}: bad node coordinates in Nodes: {line!r}") from None
                    nodes_by_tag[t] = (x, y)
            if len(nodes_by_tag) != total:
                raise MeshParseError(f"$Nodes: header announces {total} nodes, found {len(nodes_by_tag)}")
            L.expect("$EndNodes")
        elif head == "$Elements":
            nb, total, _, _ = L.ints(4)[:4]
            count = 0
            for _ in range(nb):
                dim, ent, typ, cnt = L.ints(4)[:4]
                if typ not in _GMSH_KIND:
                    raise MeshParseError(f"line {L.i}: unknown element type {typ}")
                kind, P = _GMSH_KIND[typ]
                need = P + 1 if kind == "line" else lagrange.n_nodes(kind, P)
                for _ in range(cnt):
                    vals = L.ints(need + 1)
                    if len(vals) != need + 1:
                        raise MeshParseError(f"line {L.i}: element of type {typ} needs {need} nodes")
                    raw_elements.append((vals[0], dim, ent, kind, P, vals[1:]))
                    count += 1
            if count != total:
                raise MeshParseError(f"$Elements: header announces {total} elements, found {count}")
            L.expect("$EndElements")
        else:
            # Skip unknown sections.
            end = "$End" + head[1:]
            while L.next() != end:
                pass
    if not seen_format:
        raise MeshParseError("missing $MeshFormat section")
    tags = sorted(nodes_by_tag)
    pos = {t: i for i, t in enumerate(tags)}
    nodes = np.array([nodes_by_tag[t] for t in tags], dtype=float).reshape(-1, 2)

    def phys_name(dim, ent):
        ph = ent_phys.get(dim, {}).get(ent, [])
        if ph:
            return names.get(dim, {}).get(ph[0], str(ph[0]))
        return str(ent)

    elements, patches = [], {}
    try:
        for _, dim, ent, kind, P, conn in sorted(raw_elements, key=lambda r: r[0]):
            ids = [pos[t] for t in conn]
            if kind == "line":
                patches.setdefault(phys_name(dim, ent), []).append(tuple(ids))
            else:
                perm = gmsh_permutation(kind, P)
                local = np.empty(len(ids), dtype=np.int64)
                local[list(perm)] = ids
                elements.append(Element(kind, local, phys_name(dim, ent)))
    except KeyError as exc:
        raise MeshParseError(f"element references undefined node tag {exc}") from None
    m = Mesh(nodes, elements, dict(sorted(patches.items())))
    if len(nodes) > 1:
        from scipy.spatial import cKDTree

        dup = cKDTree(nodes).query_pairs(1e-12 * m.scale)
        if dup:
            i, j = sorted(dup)[0]
            raise MeshParseError(f"nodes {i + 1} and {j + 1} coincide (unwelded mesh)")
    return m


# -- VTK -------------------------------------------------------------------------------------

_VTK_TYPE = {"quad": 70, "tri": 69}
_VTK_LINEAR = {"quad": 9, "tri": 5}


def write_vtk(m: Mesh, path, cell_data: dict | None = None, lines=None) -> None:
    """XML unstructured grid with Lagrange cells.

    ``cell_data`` maps names to per-element arrays (scaled Jacobian,
    layer, ...); block ids and layers are always written.  ``lines`` is
    an optional list of polylines (shell, medial edges) appended as
    poly-line cells.
    """
    P = m.order if m.elements else 1
    pts = [np.column_stack([m.nodes, np.zeros(len(m.nodes))])]
    conn, offs, types = [], [], []
    for e in m.elements:
        if P == 1:
            conn.extend(int(v) for v in e.nodes)
            types.append(_VTK_LINEAR[e.kind])
        else:
            conn.extend(int(v) for v in e.nodes[list(vtk_permutation(e.kind, P))])
            types.append(_VTK_TYPE[e.kind])
        offs.append(len(conn))
    base = len(m.nodes)
    for poly in lines or []:
        poly = np.asarray(poly, float)
        pts.append(np.column_stack([poly, np.zeros(len(poly))]))
        conn.extend(range(base, base + len(poly)))
        base += len(poly)
        offs.append(len(conn))
        types.append(4)
    allpts = np.vstack(pts) if pts else np.zeros((0, 3))
    n_cells = len(types)
    blocks = sorted({e.block for e in m.elements})
    bid = {b: i for i, b in enumerate(blocks)}
    data = {"block": [bid[e.block] for e in m.elements], "layer": [e.layer for e in m.elements]}
    for k, v in (cell_data or {}).items():
        data[k] = list(np.asarray(v).ravel())
    fill = len(lines or [])

    def arr(name, vals, typ):
        vals = list(vals) + [-1] * fill
        if len(vals) != n_cells:
            raise ExportError(f"cell data {name!r} has {len(vals) - fill} values for {len(m.elements)} elements")
        body = " ".join(_g(v) if typ == "Float64" else str(int(v)) for v in vals)
        return f'        <DataArray type="{typ}" Name="{escape(name)}" format="ascii">{body}</DataArray>'

    out = [
        '<?xml version="1.0"?>',
        '<VTKFile type="UnstructuredGrid" version="2.2" byte_order="LittleEndian">',
        "  <UnstructuredGrid>",
        f'    <Piece NumberOfPoints="{len(allpts)}" NumberOfCells="{n_cells}">',
        "      <Points>",
        '        <DataArray type="Float64" NumberOfComponents="3" format="ascii">'
        + " ".join(_g(v) for v in allpts.ravel()) + "</DataArray>",
        "      </Points>",
        "      <Cells>",
        '        <DataArray type="Int64" Name="connectivity" format="ascii">' + " ".join(map(str, conn)) + "</DataArray>",
        '        <DataArray type="Int64" Name="offsets" format="ascii">' + " ".join(map(str, offs)) + "</DataArray>",
        '        <DataArray type="UInt8" Name="types" format="ascii">' + " ".join(map(str, types)) + "</DataArray>",
        "      </Cells>",
        "      <CellData>",
    ]
    for k, v in data.items():
        typ = "Int64" if k in ("block", "layer") else "Float64"
        out.append(arr(k, v, typ))
    out += ["      </CellData>", "    </Piece>", "  </UnstructuredGrid>", "</VTKFile>"]
    if blocks:
        out.insert(2, "  <!-- blocks: " + escape(", ".join(f"{i}={b}" for b, i in bid.items())).replace("--", "- -") + " -->")
    _atomic_write(path, "\n".join(out) + "\n")


# -- quality report ----------------------------------------------------------------------------

def first_layer_heights(m: Mesh) -> dict:
    """Per wall patch: lengths of the element sides that leave each wall edge."""
    emap = m.edge_map()
    out: dict = {}
    for name, seqs in m.patches.items():
        if not is_wall_patch(name):
            continue
        hs = []
        for s in seqs:
            inc = emap.get(edge_key(s[0], s[-1]), [])
            if not inc:
                continue
            ei, k = inc[0]
            e = m.elements[ei]
            n = e.n_sides
            for kk in ((k + 1) % n, (k - 1) % n):
                a, b = e.side_vertices(kk)
                hs.append(float(np.linalg.norm(m.nodes[a] - m.nodes[b])))
        out[name] = np.array(hs)
    return out


def quality_report(m: Mesh, validity=None, far_min_angle: float | None = None, extra: dict | None = None) -> str:
    """JSON quality summary (schema 1).

    Parameters
    ----------
    validity : ValidityReport, optional
        Computed with :func:`strake.hocurve.check_validity` when omitted.
    far_min_angle : float, optional
        Minimum non-exempt far-field angle in degrees.
    """
    if validity is None:
        from .hocurve import check_validity

        validity = check_validity(m)
    sc = np.asarray(validity.scaled, float)
    edges = np.linspace(0.0, 1.0, 11)
    hist = np.histogram(np.clip(sc[sc > 0], 0.0, 1.0), bins=edges)[0] if len(sc) else np.zeros(10, int)
    totals = {"nodes": int(len(m.nodes)), "elements": int(len(m.elements))}
    for kind in ("quad", "tri"):
        totals[kind] = int(sum(e.kind == kind for e in m.elements))
    layers = first_layer_heights(m)
    fl = {}
    for name, hs in sorted(layers.items()):
        if len(hs):
            fl[name] = {"min": float(hs.min()), "mean": float(hs.mean())}
    all_h = np.concatenate(list(layers.values())) if layers else np.zeros(0)
    rep = {
        "schema": 1,
        "order": int(m.order) if m.elements else 1,
        "totals": totals,
        "invalid": int(validity.n_invalid),
        "invalid_ids": [int(i) for i in validity.invalid],
        "scaled_jacobian": {
            "bins": [round(float(x), 10) for x in edges],
            "histogram": [int(v) for v in hist],
            "nonpositive": int(np.sum(sc <= 0)),
            "worst": float(sc.min()) if len(sc) else 1.0,
            "worst_id": int(np.argmin(sc)) if len(sc) else None,
        },
        "first_layer_height": {
            "min": float(all_h.min()) if len(all_h) else None,
            "mean": float(all_h.mean()) if len(all_h) else None,
            "patches": fl,
        },
        "farfield_min_angle_deg": None if far_min_angle is None else float(far_min_angle),
    }
    if extra:
        rep.update(extra)
    return json.dumps(rep, indent=2, sort_keys=False)
