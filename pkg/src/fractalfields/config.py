"""Run configuration: schema validation, default expansion, content hash.

A run is described by one JSON document.  Unknown keys are rejected
everywhere so typos fail loudly; defaults are expanded before validation and
the fully resolved document is written next to the outputs.  The short
content hash of the resolved document is stamped into every output file
header, which ties tables back to the exact configuration that produced
them.
"""

import copy
import hashlib
import json

import jsonschema

from .errors import ConfigError

DEFAULTS = {
    "fractal": "sg",
    "level": 3,
    "seed": 0,
    "output": "out",
    "plots": True,
    "measure": {
        "kind": "self-similar",
        "weights": None,
    },
    "spectrum": {
        "k": 12,
    },
    "problem": {
        "p": 2.0,
        "constraint": "zero-mean",
        "datum": {"kind": "eigenmode", "mode": 1, "amplitude": 1.0},
    },
    "spde": {
        "T": 1.0,
        "dt": 0.01,
        "n_modes": 20,
        "decay": 2.0,
        "q_scale": 1.0,
        "paths": 1,
        "stride": 1,
        "trials": 3,
        "initial": {"kind": "zero", "mode": 1, "amplitude": 1.0},
    },
    "penergy": {
        "p": 4.0,
        "min_level": 2,
        "max_level": 6,
    },
    "diagnostics": {
        "probes": 200,
    },
    "tolerances": {
        "solver": 1e-9,
        "spde_step": 1e-10,
    },
}

_DATUM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["eigenmode", "random", "zero"]},
        "mode": {"type": "integer", "minimum": 1},
        "amplitude": {"type": "number"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fractal": {"enum": ["sg", "interval"]},
        "level": {"type": "integer", "minimum": 0, "maximum": 12},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string", "minLength": 1},
        "plots": {"type": "boolean"},
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["self-similar", "kusuoka"]},
                "weights": {
                    "anyOf": [
                        {"type": "null"},
                        {"type": "array",
                         "items": {"type": "number", "exclusiveMinimum": 0},
                         "minItems": 2},
                    ],
                },
            },
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 1},
            },
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p": {"type": "number", "minimum": 2},
                "constraint": {"enum": ["zero-mean", "dirichlet"]},
                "datum": _DATUM,
            },
        },
        "spde": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "n_modes": {"type": "integer", "minimum": 0},
                "decay": {"type": "number", "minimum": 0},
                "q_scale": {"type": "number", "minimum": 0},
                "paths": {"type": "integer", "minimum": 1},
                "stride": {"type": "integer", "minimum": 1},
                "trials": {"type": "integer", "minimum": 1},
                "initial": _DATUM,
            },
        },
        "penergy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p": {"type": "number", "minimum": 2},
                "min_level": {"type": "integer", "minimum": 1},
                "max_level": {"type": "integer", "minimum": 1},
            },
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probes": {"type": "integer", "minimum": 1},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "solver": {"type": "number", "exclusiveMinimum": 0},
                "spde_step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def _merge(base, override, path=""):
    """Recursive dict merge; override wins, type flips are config errors."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(document=None, overrides=None):
    """Merge defaults <- document <- overrides, then validate.

    Returns the fully expanded configuration dict.  Raises ConfigError with
    the JSON path of the offending key on any schema violation.
    """
    resolved = copy.deepcopy(DEFAULTS)
    for layer in (document, overrides):
        if layer:
            if not isinstance(layer, dict):
                raise ConfigError("configuration must be a JSON object")
            resolved = _merge(resolved, layer)
    try:
        jsonschema.validate(resolved, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(part) for part in err.absolute_path) or "<root>"
        raise ConfigError(f"config key {where}: {err.message}") from None
    pe = resolved["penergy"]
    if pe["min_level"] > pe["max_level"]:
        raise ConfigError("config key penergy: min_level exceeds max_level")
    return resolved


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from None


def config_hash(resolved):
    """Short content hash of a resolved configuration."""
    doc = {k: v for k, v in resolved.items() if k != "config_hash"}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def write_resolved(resolved, path):
    """Write the resolved config (hash embedded) next to the outputs."""
    doc = dict(resolved)
    doc["config_hash"] = config_hash(resolved)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc["config_hash"]


def read_resolved(path):
    """Load a resolved config file and check its embedded hash."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    stored = doc.pop("config_hash", None)
    actual = config_hash(doc)
    if stored is not None and stored != actual:
        raise ConfigError(f"config hash mismatch in {path}: "
                          f"stored {stored}, content {actual}")
    return doc, actual
