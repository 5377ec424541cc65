"""Run specification: JSON schema, defaults and the resolved :class:`RunSpec`."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import jsonschema

from .errors import ConfigError

__all__ = ["SCHEMA", "DEFAULTS", "RunSpec", "load_runspec", "parse_runspec"]

_POS = {"type": "number", "exclusiveMinimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_LAYER = _obj({"n": {"type": "integer", "minimum": 1}, "ratio": _POS})

SCHEMA = _obj({
    "geometry": {
        "type": "object",
        "properties": {
            "naca4": _obj({
                "digits": {"type": "string", "pattern": "^[0-9]{4}$"},
                "te": {"enum": ["open", "closed"]},
            }),
            "corner": _obj({"length": _POS}),
            "ground": _obj({"h": _POS, "thickness": _POS}),
        },
        "additionalProperties": False,
        "oneOf": [{"required": ["naca4"]}, {"required": ["corner"]}],
    },
    "domain": _obj({"box": _obj({"xmin": {"type": "number"}, "xmax": {"type": "number"},
                                 "ymin": {"type": "number"}, "ymax": {"type": "number"}},
                                ["xmin", "xmax", "ymin", "ymax"])}),
    "shell": _obj({"thickness": _POS, "spacing": _POS}),
    "topology": {"enum": ["O", "C", "H"]},
    "wake": _obj({
        "length": _POS,
        "half_angle_deg": {"type": "number", "minimum": 0, "exclusiveMaximum": 45},
        "columns": {"type": "integer", "minimum": 1},
        "gap": {"oneOf": [_POS, {"type": "null"}]},
        "growth": _POS,
    }),
    "sizing": _obj({"h_wall": _POS, "h_far": _POS}),
    "order": _obj({"P": {"type": "integer", "minimum": 2, "maximum": 10}}),
    "curving": _obj({"sample_rule": {"enum": ["default", "fine"]},
                     "tolerance": {"type": "number", "minimum": 0}}),
    "split": _obj({
        "n": {"type": "integer", "minimum": 1},
        "ratio": _POS,
        "wake_ratio_te": {"type": "number", "minimum": 1},
        "patches": {"type": "object", "additionalProperties": _LAYER},
    }),
    "farfield": _obj({
        "min_angle_deg": {"type": "number", "minimum": 0, "maximum": 34},
        "gradation": {"type": "number", "minimum": 1},
        "node_budget": {"type": "integer", "minimum": 3},
    }),
    "output": _obj({"dir": {"type": "string"},
                    "formats": {"type": "array", "items": {"enum": ["msh", "vtk"]}, "uniqueItems": True}}),
}, ["geometry"])

DEFAULTS = {
    "shell": {"thickness": 0.05},
    "topology": "H",
    "wake": {"length": 2.0, "half_angle_deg": 3.0, "columns": 8, "gap": None, "growth": 1.2},
    "sizing": {"h_wall": 0.01, "h_far": 0.5},
    "order": {"P": 4},
    "curving": {"sample_rule": "default", "tolerance": 0.0},
    "split": {"n": 5, "ratio": 2.0, "patches": {}},
    "farfield": {"min_angle_deg": 20.0, "gradation": 1.3, "node_budget": 1_000_000},
    "output": {"dir": "out", "formats": ["msh", "vtk"]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunSpec:
    """Validated configuration with every default filled in."""

    data: dict
    digest: str = ""
    source: str | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def preset(self) -> str:
        return "naca4" if "naca4" in self.data["geometry"] else "corner"

    @property
    def box(self) -> tuple:
        b = self.data["domain"]["box"]
        return (b["xmin"], b["xmax"], b["ymin"], b["ymax"])

    @property
    def thickness(self) -> float:
        return float(self.data["shell"]["thickness"])

    @property
    def topology(self) -> str:
        return self.data["topology"]

    @property
    def P(self) -> int:
        return int(self.data["order"]["P"])


def _error_path(err) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        path = ".".join([p for p in [path] + extra[:1] if p])
    return path or "<root>"


def parse_runspec(raw: dict, source: str | None = None) -> RunSpec:
    """Validate a run-spec mapping, apply defaults and return a :class:`RunSpec`."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        msgs = [f"{_error_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid run spec: " + "; ".join(msgs), path=_error_path(errors[0]))
    data = _merge(DEFAULTS, raw)
    geo = data["geometry"]
    if "naca4" in geo:
        geo["naca4"] = _merge({"digits": "0012", "te": "open"}, geo["naca4"])
        data.setdefault("domain", {"box": {"xmin": -5.0, "xmax": 7.0, "ymin": -5.0, "ymax": 5.0}})
    else:
        L = geo["corner"].get("length", 1.0)
        geo["corner"] = {"length": L}
        data.setdefault("domain", {"box": {"xmin": 0.0, "xmax": L, "ymin": 0.0, "ymax": L}})
        if "topology" not in raw:
            data["topology"] = "C"
    if "ground" in geo:
        geo["ground"] = _merge({"h": 0.1, "thickness": data["shell"]["thickness"]}, geo["ground"])
    data["split"].setdefault("wake_ratio_te", data["split"]["ratio"])
    b = data["domain"]["box"]
    if not b["xmax"] > b["xmin"]:
        raise ConfigError("domain.box: xmax must exceed xmin", path="domain.box.xmax")
    if not b["ymax"] > b["ymin"]:
        raise ConfigError("domain.box: ymax must exceed ymin", path="domain.box.ymax")
    canon = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return RunSpec(data, hashlib.sha256(canon.encode()).hexdigest(), source)


def load_runspec(path) -> RunSpec:
    """Read and validate a JSON run spec.

    Raises
    ------
    ConfigError
        Unreadable file, invalid JSON, or schema violations (messages
        carry the dotted key path, e.g. ``shell.thickness``).
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read run spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run spec {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("run spec must be a JSON object")
    return parse_runspec(raw, str(path))
