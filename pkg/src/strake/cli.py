"""Command-line driver.

Exit codes: 0 success, 2 invalid or non-conformal mesh, 3 geometric or
partition failure, 4 configuration error or unreadable input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from . import errors, meshio
from .hocurve import check_validity
from .linmesh import conformality_check
from .pipeline import STAGES, run
from .runspec import load_runspec

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_GEOMETRY = 3
EXIT_CONFIG = 4

_CODES = [
    ((errors.ConfigError, errors.SizingError, errors.MeshParseError, OSError), EXIT_CONFIG),
    ((errors.ValidationFailure, errors.ConformalityError), EXIT_INVALID),
    ((errors.StrakeError, ValueError), EXIT_GEOMETRY),
]


def exit_code(exc: BaseException) -> int:
    for types, code in _CODES:
        if isinstance(exc, types):
            return code
    return 1


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module the exception came through."""
    name = "strake"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("strake.") and mod not in ("strake.cli", "strake.pipeline"):
            name = mod.split(".", 1)[1]
    return name


def _fail(exc: BaseException) -> int:
    print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
    return exit_code(exc)


def cmd_generate(args) -> int:
    try:
        spec = load_runspec(args.runspec)
        res = run(spec, args.stage, args.out)
    except Exception as exc:  # mapped onto exit codes
        return _fail(exc)
    for st in res.stages:
        print(f"{st.name:9s} {st.seconds:7.2f}s  " + json.dumps(st.summary, default=str, sort_keys=True))
    if res.report is not None:
        print(f"invalid: {res.report['invalid']}")
    return EXIT_OK


def _load(path):
    return meshio.read_msh(path)


def cmd_validate(args) -> int:
    try:
        m = _load(args.mesh)
        conf = conformality_check(m)
        v = check_validity(m)
    except Exception as exc:
        return _fail(exc)
    print(f"elements: {len(m.elements)}  nodes: {len(m.nodes)}  order: {m.order if m.elements else 0}")
    print(f"conformal: {conf.ok}  edge incidence: {conf.histogram}")
    print(f"invalid: {v.n_invalid}")
    if v.n_invalid:
        print(f"worst element: {v.worst_id} (scaled Jacobian {v.worst_scaled:.4g})")
    return EXIT_OK if conf.ok and v.valid else EXIT_INVALID


def cmd_report(args) -> int:
    try:
        m = _load(args.mesh)
        text = meshio.quality_report(m, check_validity(m))
    except Exception as exc:
        return _fail(exc)
    print(text)
    return EXIT_OK


def cmd_export(args) -> int:
    src = Path(args.mesh)
    out = Path(args.out) if args.out else src.with_suffix(".vtu" if args.format == "vtk" else ".msh")
    try:
        m = _load(src)
        if args.format == "vtk":
            meshio.write_vtk(m, out)
        else:
            meshio.write_msh(m, out)
    except Exception as exc:
        return _fail(exc)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strake", description="Semi-structured high-order 2D mesh generator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run the pipeline on a JSON run spec")
    g.add_argument("runspec")
    g.add_argument("--stage", choices=STAGES, default="final")
    g.add_argument("--out", metavar="DIR", default=None, help="output directory (default: output.dir)")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="check conformality and element validity of an MSH file")
    v.add_argument("mesh")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("report", help="print the JSON quality report of an MSH file")
    r.add_argument("mesh")
    r.set_defaults(func=cmd_report)

    e = sub.add_parser("export", help="convert an MSH file")
    e.add_argument("mesh")
    e.add_argument("--format", choices=("msh", "vtk"), required=True)
    e.add_argument("--out", default=None, help="output path (default: input with new suffix)")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
