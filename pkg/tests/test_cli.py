import json

import numpy as np
import pytest

from strake.cli import main
from strake.hocurve import elevate
from strake.mesh import Element, Mesh
from strake.meshio import read_msh, write_msh

from conftest import REFERENCE_SPEC

SMALL_SPEC = {
    "geometry": {"naca4": {"digits": "0012", "te": "open"}},
    "topology": "O",
    "sizing": {"h_wall": 0.02, "h_far": 1.0},
    "order": {"P": 2},
    "split": {"n": 2, "ratio": 2.0},
    "output": {"formats": ["msh"]},
}


def write_spec(path, spec):
    path.write_text(json.dumps(spec))
    return str(path)


@pytest.fixture(scope="module")
def reference_out(tmp_path_factory):
    d = tmp_path_factory.mktemp("ref")
    spec = write_spec(d / "run.json", REFERENCE_SPEC)
    return d, main(["generate", spec, "--out", str(d / "out")])


def test_generate_reference(reference_out, capsys):
    d, code = reference_out
    assert code == 0
    out = d / "out"
    for name in ("partition.json", "linear.msh", "curved.msh", "split.msh", "final.msh", "final.vtu",
                 "report.json", "manifest.json"):
        assert (out / name).is_file(), name
    rep = json.loads((out / "report.json").read_text())
    assert rep["invalid"] == 0
    man = json.loads((out / "manifest.json").read_text())
    assert [s["name"] for s in man["stages"]] == ["partition", "linear", "curved", "split", "final"]
    assert man["runspec_sha256"] == rep["runspec_sha256"]


def test_bad_topology_exit_4(tmp_path, capsys):
    spec = write_spec(tmp_path / "r.json", {**SMALL_SPEC, "topology": "X"})
    assert main(["generate", spec, "--out", str(tmp_path / "o")]) == 4
    err = capsys.readouterr().err
    assert err.startswith("error [runspec]:") and "topology" in err


def test_missing_runspec_exit_4(tmp_path):
    assert main(["generate", str(tmp_path / "none.json")]) == 4


def test_bad_arguments_exit_4():
    assert main(["generate"]) == 4
    assert main(["export", "x.msh", "--format", "stl"]) == 4


def test_stage_linear_only(tmp_path):
    spec = write_spec(tmp_path / "r.json", SMALL_SPEC)
    out = tmp_path / "o"
    assert main(["generate", spec, "--stage", "linear", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["linear.msh", "manifest.json", "partition.json"]


def test_validate(reference_out, tmp_path, capsys):
    d, _ = reference_out
    assert main(["validate", str(d / "out" / "final.msh")]) == 0
    assert "invalid: 0" in capsys.readouterr().out

    m = elevate(Mesh(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float), [Element("quad", [0, 1, 2, 3], "b")], {}), 2)
    m.nodes[m.elements[0].nodes[8]] = [3.0, 3.0]
    write_msh(m, tmp_path / "folded.msh")
    assert main(["validate", str(tmp_path / "folded.msh")]) == 2
    assert "worst element: 0" in capsys.readouterr().out

    (tmp_path / "junk.msh").write_text("not a mesh\n")
    assert main(["validate", str(tmp_path / "junk.msh")]) == 4
    assert main(["validate", str(tmp_path / "missing.msh")]) == 4


def test_report_and_export(reference_out, tmp_path, capsys):
    d, _ = reference_out
    final = d / "out" / "final.msh"
    assert main(["report", str(final)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["invalid"] == 0 and rep["totals"]["tri"] > 0
    assert main(["export", str(final), "--format", "vtk", "--out", str(tmp_path / "f.vtu")]) == 0
    assert (tmp_path / "f.vtu").read_text().rstrip().endswith("</VTKFile>")
    assert main(["export", str(final), "--format", "msh", "--out", str(tmp_path / "f.msh")]) == 0
    assert (tmp_path / "f.msh").read_bytes() == final.read_bytes()


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    spec = write_spec(tmp_path / "r.json", SMALL_SPEC)
    outs = []
    for n in ("1", "4"):
        monkeypatch.setenv("STRAKE_THREADS", n)
        out = tmp_path / f"o{n}"
        assert main(["generate", spec, "--out", str(out)]) == 0
        outs.append((out / "final.msh").read_bytes())
    assert outs[0] == outs[1]
    assert len(read_msh(tmp_path / "o1" / "final.msh").elements) > 0
