"""Run configuration: JSON schema, defaults and object construction."""

from __future__ import annotations

import copy
import json
import jsonschema

from .geometry import region_from_dict
from .grid import Grid
from .hjb import ChainProblem
from .models import (BioSwitchParams, SwitchGeometry, bio_switch_model, bio_switch_problem, brownian_model,
                     controlled_drift_model)
from .motion import MotionSpec, PathUntilT, Phase, ReachAtT, RelativeDwell


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


REGION = {
    "type": "object",
    "minProperties": 1,
    "maxProperties": 1,
    "additionalProperties": False,
    "properties": {
        "ball": _obj({"center": _vec, "radius": _pos, "closed": {"type": "boolean"}}, ["center", "radius"]),
        "box": _obj({"lo": _vec, "hi": _vec, "closed": {"type": "boolean"}}, ["lo", "hi"]),
        "half_space": _obj({"normal": _vec, "offset": _num, "closed": {"type": "boolean"}}, ["normal", "offset"]),
        "complement": {"$ref": "#/$defs/region"},
        "union": {"type": "array", "items": {"$ref": "#/$defs/region"}, "minItems": 1},
        "intersection": {"type": "array", "items": {"$ref": "#/$defs/region"}, "minItems": 1},
        "difference": {"type": "array", "items": {"$ref": "#/$defs/region"}, "minItems": 2, "maxItems": 2},
        "everything": _obj({"dim": {"type": "integer", "minimum": 1}}),
        "empty": _obj({"dim": {"type": "integer", "minimum": 1}}),
    },
}

DEADLINE = {
    "oneOf": [
        _obj({"type": {"const": "path"}}, ["type"]),
        _obj({"type": {"const": "reach"}, "time": {"type": "number", "minimum": 0}}, ["type", "time"]),
        _obj({"type": {"const": "dwell"}, "duration": _pos}, ["type", "duration"]),
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"region": REGION},
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "spec"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "model": {
            "oneOf": [
                _obj({"name": {"const": "bio_switch"},
                      "params": _obj({"theta1": _pos, "theta2": _pos, "n1": _pos, "n2": _pos, "k1": _pos,
                                      "k2": _pos, "mu_x": _pos, "mu_y": _pos, "ux_box": _pair, "uy_box": _pair})},
                     ["name"]),
                _obj({"name": {"const": "brownian"}, "sigma": _pos, "dim": {"type": "integer", "minimum": 1}},
                     ["name"]),
                _obj({"name": {"const": "controlled_drift"}, "u_max": {"type": "number", "minimum": 0},
                      "sigma": _pos}, ["name"]),
            ]
        },
        "spec": {
            "oneOf": [
                _obj({"preset": {"const": "bio_switch"}, "T1": _pos, "T2": _pos, "eps": _pos,
                      "geometry": _obj({"b_radius": _pos, "c_radius": _pos, "a_radius": _pos, "strip": _pos})},
                     ["preset"]),
                _obj({"horizon": _pos, "eps": _pos,
                      "phases": {"type": "array", "minItems": 1,
                                 "items": _obj({"way": {"$ref": "#/$defs/region"},
                                                "goal": {"$ref": "#/$defs/region"},
                                                "deadline": DEADLINE}, ["way", "goal"])}},
                     ["horizon", "phases"]),
            ]
        },
        "grid": _obj({"lo": _vec, "hi": _vec, "nodes": {"type": "array", "items": {"type": "integer", "minimum": 3}},
                      "margin": {"type": "number", "minimum": 0}}, ["lo", "hi", "nodes"]),
        "solver": _obj({
            "dt_pde": _pos,
            "snapshot_every": _pos,
            "method": {"enum": ["auto", "affine", "lattice"]},
            "lattice_points": {"type": "integer", "minimum": 2},
            "superlevels": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
            "export_every": _pos,
            "policy_every": _pos,
        }),
        "verify": _obj({
            "dt": _pos,
            "n_paths": {"type": "integer", "minimum": 1},
            "n_nodes": {"type": "integer", "minimum": 1},
            "node_seed": {"type": "integer", "minimum": 0},
            "tolerance": {"type": "number", "minimum": 0},
            "check": {"enum": ["one_sided", "two_sided"]},
            "mode": {"enum": ["indicator", "mollified"]},
            "policy": {"enum": ["extracted", "constant"]},
            "value_range": _pair,
        }),
        "simulate": _obj({
            "n_paths": {"type": "integer", "minimum": 1},
            "x0": _vec,
            "t0": {"type": "number", "minimum": 0},
            "dt": _pos,
            "policy": {"enum": ["constant", "extracted"]},
            "control": _vec,
            "sim_box": _obj({"lo": _vec, "hi": _vec}, ["lo", "hi"]),
        }),
    },
}

DEFAULTS = {
    "name": "run",
    "seed": 0,
    # unset solver cadences mean "every stored step"; unset dt_pde means the CFL bound
    "solver": {"method": "auto", "lattice_points": 9, "superlevels": [0.5]},
    "verify": {"dt": 1e-3, "n_paths": 2000, "n_nodes": 10, "node_seed": 1, "tolerance": 0.07,
               "check": "one_sided", "mode": "indicator", "policy": "extracted", "value_range": [0.05, 0.95]},
    "simulate": {"n_paths": 4, "t0": 0.0, "dt": 1e-2, "policy": "constant"},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: (len(e.path), list(map(str, e.path))))
    if not errors:
        return
    e = jsonschema.exceptions.best_match(errors)
    # report the most specific message, including any missing or unknown key
    for cand in errors:
        if cand.validator in ("required", "additionalProperties"):
            e = cand
            break
    where = "/".join(str(p) for p in e.absolute_path) or "<root>"
    raise ConfigError(f"{where}: {e.message}", where)


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "<file>")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "<file>")
    if isinstance(raw, dict) and "config" in raw and "tool" in raw:
        raw = raw["config"]  # a run manifest
    return resolve(raw)


def resolve(raw: dict) -> dict:
    """Validate and fill defaults; the result is what manifests echo."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    m = cfg["model"]
    if m["name"] == "bio_switch":
        m["params"] = _merge(BioSwitchParams().to_dict(), m.get("params", {}))
        if cfg["spec"].get("preset") != "bio_switch":
            raise ConfigError("the bio_switch model needs the bio_switch spec preset", "spec")
        sp = cfg["spec"]
        sp.setdefault("T1", 60.0)
        sp.setdefault("T2", 120.0)
        sp["geometry"] = _merge(SwitchGeometry().to_dict(), sp.get("geometry", {}))
        cfg.setdefault("grid", {"lo": [0.0, 0.0], "hi": [120.0, 120.0], "nodes": [121, 121]})
        cfg["grid"].setdefault("margin", 0.0)
    else:
        if cfg["spec"].get("preset"):
            raise ConfigError("spec presets are only available for the bio_switch model", "spec/preset")
        if "grid" not in cfg:
            raise ConfigError("grid: 'grid' is a required property", "grid")
        cfg["grid"].setdefault("margin", 0.0)
        if m["name"] == "brownian":
            m.setdefault("sigma", 1.0)
            m.setdefault("dim", 1)
        else:
            m.setdefault("u_max", 1.0)
            m.setdefault("sigma", 0.5)
        for ph in cfg["spec"]["phases"]:
            ph.setdefault("deadline", {"type": "path"})
    g = cfg["grid"]
    if not (len(g["lo"]) == len(g["hi"]) == len(g["nodes"])):
        raise ConfigError("grid: lo, hi and nodes must have equal length", "grid")
    return cfg


def build_model(cfg: dict):
    m = cfg["model"]
    if m["name"] == "bio_switch":
        return bio_switch_model(_params(m))
    if m["name"] == "brownian":
        return brownian_model(m["sigma"], m["dim"])
    return controlled_drift_model(m["u_max"], m["sigma"])


def _params(m: dict) -> BioSwitchParams:
    p = dict(m["params"])
    p["ux_box"], p["uy_box"] = tuple(p["ux_box"]), tuple(p["uy_box"])
    return BioSwitchParams(**p)


def _deadline(d: dict):
    if d["type"] == "path":
        return PathUntilT()
    if d["type"] == "reach":
        return ReachAtT(float(d["time"]))
    return RelativeDwell(float(d["duration"]))


def build_problem(cfg: dict):
    """Return ``(ChainProblem, extra manifest info)``."""
    s = cfg["solver"]
    g = cfg["grid"]
    try:
        if cfg["model"]["name"] == "bio_switch":
            sp = cfg["spec"]
            grid_lo, grid_hi = g["lo"], g["hi"]
            if len(set(grid_lo)) != 1 or len(set(grid_hi)) != 1 or len(set(g["nodes"])) != 1:
                raise ConfigError("bio_switch grids must be square", "grid")
            sc = bio_switch_problem(_params(cfg["model"]), cfg.get("name", "bio_switch"), T1=sp["T1"], T2=sp["T2"],
                                    nodes=g["nodes"][0], roi=(grid_lo[0], grid_hi[0]), margin=g["margin"],
                                    geometry=SwitchGeometry(**sp["geometry"]), eps=sp.get("eps"),
                                    dt_pde=s.get("dt_pde"), snapshot_every=s.get("snapshot_every"),
                                    method=s["method"])
            return sc.problem, sc.manifest()
        sp = cfg["spec"]
        phases = [Phase(region_from_dict(p["way"]), region_from_dict(p["goal"]), _deadline(p["deadline"]))
                  for p in sp["phases"]]
        spec = MotionSpec(tuple(phases), float(sp["horizon"]), sp.get("eps"))
        grid = Grid.covering(g["lo"], g["hi"], g["nodes"], margin=g["margin"])
        model = build_model(cfg)
        prob = ChainProblem(model, spec, grid, dt_pde=s.get("dt_pde"), snapshot_every=s.get("snapshot_every"),
                            method=s["method"], lattice_points=s["lattice_points"])
        return prob, {}
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        if type(exc).__name__ == "CFLError":
            raise
        raise ConfigError(str(exc), "spec")
