"""Staged mesh generation driven by a :class:`~strake.runspec.RunSpec`.

Stages run in order ``partition``, ``linear``, ``curved``, ``split``,
``final``; each writes its artifacts to the output directory so a run
can be inspected (or stopped) after any stage.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import meshio
from .errors import ValidationFailure
from .farfield import Sizing, extract_skin, merge, min_angle, triangulate_farfield
from .geomkit import BoundaryLoop, Segment, naca4_loop
from .hocurve import check_validity, curve_mesh
from .isosplit import LayerSpec, WakeSplit, split_boundary_layer
from .linmesh import build_linear_mesh, conformality_check
from .medial import approximate_medial, build_shell
from .mesh import Mesh
from .parallel import worker_count
from .partition import BlockGraph, WakeParams, build_topology
from .runspec import RunSpec

__all__ = ["STAGES", "StageResult", "RunResult", "build_geometry", "run"]

log = logging.getLogger("strake")

STAGES = ("partition", "linear", "curved", "split", "final")


@dataclass
class StageResult:
    name: str
    seconds: float
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


@dataclass
class RunResult:
    spec: RunSpec
    stages: list = field(default_factory=list)
    graph: BlockGraph | None = None
    meshes: dict = field(default_factory=dict)
    validity: object = None
    report: dict | None = None

    @property
    def mesh(self) -> Mesh | None:
        for name in reversed(STAGES):
            if name in self.meshes:
                return self.meshes[name]
        return None


def build_geometry(spec: RunSpec):
    """Body loop, extra wall loops and wall edge lengths for ``spec``."""
    geo = spec["geometry"]
    xmin, xmax, ymin, ymax = spec.box
    h_walls = {}
    walls = []
    if "naca4" in geo:
        loop = naca4_loop(geo["naca4"]["digits"], geo["naca4"]["te"])
    else:
        L = geo["corner"]["length"]
        loop = BoundaryLoop([Segment("wy", (0.0, L), (0.0, 0.0)), Segment("wx", (0.0, 0.0), (L, 0.0))],
                            False, ["wy", "wx"], "corner")
    if "ground" in geo:
        g = geo["ground"]
        walls.append(BoundaryLoop([Segment("ground", (xmin, ymin), (xmax, ymin))], False, ["ground"], "ground"))
        h_walls["wall:ground"] = g["h"]
    return loop, walls, h_walls


def _graph_payload(g: BlockGraph) -> dict:
    blocks = []
    for b in g.blocks:
        blocks.append({
            "id": b.id,
            "kind": b.kind,
            "corners": b.corners.tolist(),
            "sides": [{"kind": s.kind, "curve": s.curve_id, "t0": s.t0, "t1": s.t1,
                       "offset": s.offset, "patch": s.patch} for s in b.sides],
            "normal_sides": list(b.normal_sides) if b.normal_sides else None,
        })
    adjacency = {str(k): v for k, v in g.adjacency.items()}
    return {"topology": g.topology, "thickness": g.thickness, "blocks": blocks, "adjacency": adjacency}


def _write_mesh(m: Mesh, out: Path, stem: str, formats) -> list:
    paths = []
    if "msh" in formats:
        p = out / f"{stem}.msh"
        meshio.write_msh(m, p)
        paths.append(str(p))
    if "vtk" in formats:
        p = out / f"{stem}.vtu"
        meshio.write_vtk(m, p)
        paths.append(str(p))
    return paths


def _validity_summary(v) -> dict:
    return {"invalid": v.n_invalid, "worst_scaled": float(v.worst_scaled)}


def run(spec: RunSpec, stage: str = "final", out_dir=None, write: bool = True) -> RunResult:
    """Run the pipeline up to and including ``stage``.

    Raises
    ------
    ValidationFailure
        A curved, split or final mesh has invalid elements.  Artifacts of
        the failing stage are written before raising.
    GeometryError, ConfigError, SizingError, ...
        Propagated from the stage that failed.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    last = STAGES.index(stage)
    out = Path(out_dir if out_dir is not None else spec["output"]["dir"])
    formats = spec["output"]["formats"]
    if write:
        out.mkdir(parents=True, exist_ok=True)
    res = RunResult(spec)
    workers = worker_count()
    T = spec.thickness
    P = spec.P
    rule = spec["curving"]["sample_rule"]
    tol = spec["curving"]["tolerance"]

    def check(m: Mesh, name: str):
        v = check_validity(m, rule)
        res.validity = v
        bad = [i for i, s in enumerate(v.scaled) if s <= tol]
        return v, bad

    # partition
    t0 = time.perf_counter()
    loop, walls, h_walls = build_geometry(spec)
    spacing = spec["shell"].get("spacing")
    shell = build_shell(loop, T, spacing)
    wall_shells = [build_shell(w, spec["geometry"]["ground"]["thickness"], spacing) for w in walls]
    junction = None
    if not loop.closed:
        junction = approximate_medial(loop, shell.spacing, 2.0 * T)
    w = spec["wake"]
    wake = WakeParams(w["length"], w["half_angle_deg"], w["columns"], w["gap"], w["growth"])
    graph = build_topology(shell, spec.topology, wake, junction, wall_shells, spec.box)
    res.graph = graph
    st = StageResult("partition", time.perf_counter() - t0,
                     summary={"blocks": len(graph.blocks), "halos": len(shell.halos)})
    if write:
        p = out / "partition.json"
        meshio._atomic_write(p, json.dumps(_graph_payload(graph), indent=1, sort_keys=True) + "\n")
        st.artifacts.append(str(p))
        if "vtk" in formats:
            p = out / "partition.vtu"
            lines = [b.corners[[0, 1, 2, 3, 0]] for b in graph.blocks] + [shell.outer]
            meshio.write_vtk(Mesh(np.zeros((0, 2)), [], {}), p, lines=lines)
            st.artifacts.append(str(p))
    res.stages.append(st)
    log.info("partition: %d blocks (%.2fs)", len(graph.blocks), st.seconds)
    if last == 0:
        return _finish(res, out, write)

    # linear
    t0 = time.perf_counter()
    lin = build_linear_mesh(graph, spec["sizing"]["h_wall"], h_walls)
    rep = conformality_check(lin)
    res.meshes["linear"] = lin
    st = StageResult("linear", time.perf_counter() - t0,
                     summary={"elements": len(lin.elements), "conformal": rep.ok})
    if write:
        st.artifacts = _write_mesh(lin, out, "linear", formats)
    res.stages.append(st)
    if not rep.ok:
        raise ValidationFailure(f"linear mesh is not conformal ({rep.n_violations} violations)")
    if last == 1:
        return _finish(res, out, write)

    # curved
    t0 = time.perf_counter()
    curved = curve_mesh(lin, graph.curves, P, workers=workers)
    res.meshes["curved"] = curved
    v, bad = check(curved, "curved")
    st = StageResult("curved", time.perf_counter() - t0, summary=_validity_summary(v))
    if write:
        st.artifacts = _write_mesh(curved, out, "curved", formats)
    res.stages.append(st)
    if bad:
        _finish(res, out, write)
        raise ValidationFailure(f"curved mesh has {len(bad)} invalid elements (first {bad[0]})")
    if last == 2:
        return _finish(res, out, write)

    # split
    t0 = time.perf_counter()
    sp = spec["split"]
    specs = {None: LayerSpec(sp["n"], sp["ratio"])}
    for name, ps in sp["patches"].items():
        specs[name] = LayerSpec(ps.get("n", sp["n"]), ps.get("ratio", sp["ratio"]))
    wsplit = None
    if graph.wake_axis is not None:
        origin, e = graph.wake_axis
        wsplit = WakeSplit(sp["n"], sp["wake_ratio_te"], wake.length, origin, e)
    split = split_boundary_layer(curved, specs, wsplit)
    res.meshes["split"] = split
    v, bad = check(split, "split")
    st = StageResult("split", time.perf_counter() - t0, summary=_validity_summary(v))
    st.summary["elements"] = len(split.elements)
    if write:
        st.artifacts = _write_mesh(split, out, "split", formats)
    res.stages.append(st)
    if bad:
        _finish(res, out, write)
        raise ValidationFailure(f"split mesh has {len(bad)} invalid elements (first {bad[0]})")
    if last == 3:
        return _finish(res, out, write)

    # final
    t0 = time.perf_counter()
    ff = spec["farfield"]
    sizing = Sizing(spec["sizing"]["h_far"], ff["gradation"], ff["min_angle_deg"], ff["node_budget"])
    far = triangulate_farfield(extract_skin(split), spec.box, sizing)
    angle = min_angle(far, exempt=True, min_angle_deg=ff["min_angle_deg"])
    final = merge(split, far)
    res.meshes["final"] = final
    v, bad = check(final, "final")
    st = StageResult("final", time.perf_counter() - t0, summary=_validity_summary(v))
    st.summary.update({"elements": len(final.elements), "nodes": len(final.nodes),
                       "farfield_min_angle_deg": angle})
    res.report = json.loads(meshio.quality_report(final, v, angle, {"runspec_sha256": spec.digest}))
    if write:
        st.artifacts = _write_mesh(final, out, "final", formats)
    res.stages.append(st)
    _finish(res, out, write)
    if bad:
        raise ValidationFailure(f"final mesh has {len(bad)} invalid elements (first {bad[0]})")
    return res


def _finish(res: RunResult, out: Path, write: bool) -> RunResult:
    if not write:
        return res
    if res.report is not None:
        p = out / "report.json"
        meshio._atomic_write(p, json.dumps(res.report, indent=1, sort_keys=True) + "\n")
    manifest = {
        "runspec": res.spec.source,
        "runspec_sha256": res.spec.digest,
        "config": res.spec.data,
        "stages": [{"name": s.name, "artifacts": [os.path.basename(a) for a in s.artifacts],
                    "summary": s.summary} for s in res.stages],
    }
    text = json.dumps(manifest, indent=1, sort_keys=True, default=_jsonable) + "\n"
    meshio._atomic_write(out / "manifest.json", text)
    return res


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return str(x)
