"""Scenario files: JSON text validated against a closed schema."""

import json
from pathlib import Path

import jsonschema
import numpy as np

from .filters import FILTER_NAMES
from .model import RegularityWindow, SensorModel, SystemModel
from .scenarios import PRESETS, Scenario, draw_example2_rows
from .topology import PRESETS as TOPOLOGY_PRESETS, preset as topology_preset, uniform_weights


class ConfigError(ValueError):
    pass


_matrix = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_provider = {"oneOf": [_matrix, {"type": "object", "additionalProperties": False,
                                 "required": ["table"],
                                 "properties": {"table": {"type": "array", "items": _matrix}}}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "preset": {"enum": sorted(PRESETS)},
        "model": {
            "type": "object", "additionalProperties": False,
            "required": ["state_dim", "A", "Q"],
            "properties": {"state_dim": {"type": "integer", "minimum": 1},
                           "A": _provider, "Q": _provider,
                           "beta1": {"type": "number", "exclusiveMinimum": 0}},
        },
        "sensors": {"type": "array", "minItems": 1, "items": {
            "type": "object", "additionalProperties": False, "required": ["H", "R"],
            "properties": {"H": _provider, "R": _provider}}},
        "H_rows": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "topology": {"oneOf": [
            {"type": "object", "additionalProperties": False, "required": ["preset"],
             "properties": {"preset": {"enum": sorted(TOPOLOGY_PRESETS)}}},
            {"type": "object", "additionalProperties": False, "required": ["N", "edges"],
             "properties": {"N": {"type": "integer", "minimum": 1},
                            "undirected": {"type": "boolean"},
                            "edges": {"type": "array", "items": {
                                "type": "array", "minItems": 2, "maxItems": 2,
                                "items": {"type": "integer", "minimum": 1}}}}},
        ]},
        "P0": _matrix,
        "P0_inflation": {"type": "number", "minimum": 1},
        "horizon": {"type": "integer", "minimum": 0},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "filters": {"type": "array", "minItems": 1, "items": {"enum": list(FILTER_NAMES)}},
        "weights": {"type": "object", "additionalProperties": False, "properties": {
            "tol": {"type": "number", "exclusiveMinimum": 0},
            "max_iter": {"type": "integer", "minimum": 1},
            "n_probes": {"type": "integer", "minimum": 0},
            "seed": {"type": "integer", "minimum": 0}}},
        "table1_fusion": {"enum": ["optimal", "scalar"]},
        "observability": {"type": "object", "additionalProperties": False, "properties": {
            "window": {"type": "integer", "minimum": 1},
            "alpha": {"type": "number", "exclusiveMinimum": 0},
            "beta": {"type": "number", "exclusiveMinimum": 0}}},
        "regularity": {"type": "object", "additionalProperties": False,
                       "required": ["anchors", "window_len", "lower_bound"], "properties": {
                           "anchors": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                           "window_len": {"type": "integer", "minimum": 1},
                           "lower_bound": {"type": "number", "exclusiveMinimum": 0}}},
        "output": {"type": "string"},
    },
    "anyOf": [{"required": ["preset"]}, {"required": ["model", "sensors", "topology"]}],
}


def _line_of(text, path):
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    needle = f'"{keys[-1]}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


def parse(text, source="<string>"):
    """Parse and schema-check a scenario document; returns the raw dict."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        keys = list(e.path)
        if e.validator == "additionalProperties" and isinstance(e.instance, dict):
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            keys += extra[:1]
        line = _line_of(text, keys)
        loc = f"{source}:{line}" if line else source
        raise ConfigError(f"{loc}: at {where}: {e.message}")
    return doc


def _table(value):
    if isinstance(value, dict):
        return np.array(value["table"], dtype=float)
    return np.array(value, dtype=float)


def build(doc, source="<string>") -> Scenario:
    """Turn a parsed document into a :class:`Scenario`. Dimension problems
    raise :class:`ConfigError`."""
    horizon = doc.get("horizon", 100)
    trials = doc.get("trials", 500)
    seed = doc.get("seed", 0)
    if "preset" in doc:
        kwargs = {"horizon": horizon, "trials": trials, "seed": seed}
        if doc["preset"] == "paper_example_2":
            rows = doc.get("H_rows") or draw_example2_rows(seed)
            kwargs["rows"] = [tuple(r) for r in rows]
        sc = PRESETS[doc["preset"]](**kwargs)
    else:
        sc = Scenario(None, None, None, None, horizon, trials, seed)
    if "model" in doc:
        m = doc["model"]
        sc.model = SystemModel(m["state_dim"], _table(m["A"]), _table(m["Q"]),
                               horizon=horizon, beta1=m.get("beta1"), name="inline")
        sc.window = None
    if "sensors" in doc:
        sensors = []
        for i, s in enumerate(doc["sensors"]):
            H, R = _table(s["H"]), _table(s["R"])
            sensors.append(SensorModel(i + 1, H, R, meas_dim=H.shape[-2]))
        sc.sensors = sensors
    if "topology" in doc:
        t = doc["topology"]
        if "preset" in t:
            sc.topology = topology_preset(t["preset"])
        else:
            # [from, to], 1-based: "to" receives from "from"
            pairs = [(b - 1, a - 1) for a, b in t["edges"]]
            if t.get("undirected"):
                pairs += [(j, i) for i, j in pairs]
            try:
                sc.topology = uniform_weights(pairs, t["N"])
            except ValueError as exc:
                raise ConfigError(f"{source}: topology: {exc}") from None
    n = sc.model.state_dim
    sc.P0 = np.array(doc["P0"], dtype=float) if "P0" in doc else (
        sc.P0 if sc.P0 is not None else np.eye(n))
    if sc.P0.shape != (n, n):
        raise ConfigError(f"{source}: P0 must be {n}x{n}")
    if sc.topology.N != len(sc.sensors):
        raise ConfigError(f"{source}: topology has {sc.topology.N} nodes "
                          f"but there are {len(sc.sensors)} sensors")
    for s in sc.sensors:
        if s.H(0).shape[1] != n:
            raise ConfigError(f"{source}: sensor {s.sensor_id} H must have {n} columns")
    sc.P0_inflation = doc.get("P0_inflation", 1.0)
    sc.horizon, sc.trials, sc.seed = horizon, trials, seed
    sc.model.horizon = horizon
    if "filters" in doc:
        sc.filters = tuple(doc["filters"])
    sc.weight_settings = dict(doc.get("weights", {}))
    if "table1_fusion" in doc:
        sc.extra["table1_fusion"] = doc["table1_fusion"]
    obs = doc.get("observability", {})
    sc.uco_window = obs.get("window", sc.uco_window)
    sc.observability = obs
    if "regularity" in doc:
        r = doc["regularity"]
        sc.window = RegularityWindow(tuple(r["anchors"]), r["window_len"], r["lower_bound"])
    sc.name = doc.get("name", sc.name)
    sc.output = doc.get("output")
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return build(parse(text, str(path)), str(path))
