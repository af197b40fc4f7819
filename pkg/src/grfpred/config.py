"""Run configuration: YAML document, schema validation, flag overrides.

A run is driven by one key-value document. Validation is strict: unknown
keys anywhere are rejected before any computation starts, and
command-line flags take precedence over the document.
"""

from __future__ import annotations

import copy

import yaml


class ConfigError(ValueError):
    """The run configuration is malformed or inconsistent."""


def _typename(t):
    return " or ".join(x.__name__ for x in t) if isinstance(t, tuple) else t.__name__


class Key:
    def __init__(self, types, default=None, required=False, choices=None, item_type=None):
        self.types = types if isinstance(types, tuple) else (types,)
        self.default = default
        self.required = required
        self.choices = choices
        self.item_type = item_type


_DATA_SCHEMA = {
    "genotype": Key(str, required=True),
    "phenotype": Key(str, required=True),
    "layout": Key(str, required=True),
    "subpop": Key((str, type(None)), default=None),
    "center_y": Key(bool, default=False),
}

_MODEL_SCHEMA = {
    "components": Key(list, default=["genotype", "subpop", "spatial"], item_type=str),
    "beta00": Key((int, float), default=0.001),
    "starts": Key(int, default=5),
    "max_evals": Key(int, default=2000),
    "tol": Key((int, float), default=1e-6),
}

_COMMON = {
    "seed": Key(int, default=0),
    "threads": Key(int, default=1),
    "output_dir": Key(str, default="out"),
}

SCHEMAS = {
    "fit": {
        **_COMMON,
        "data": _DATA_SCHEMA,
        "model": _MODEL_SCHEMA,
        "fit": {
            "dump_kernels": Key(bool, default=False),
        },
    },
    "predict": {
        **_COMMON,
        "data": _DATA_SCHEMA,
        "model": _MODEL_SCHEMA,
        "predict": {
            "fit_json": Key(str, required=True),
            "genotype": Key(str, required=True),
            "layout": Key((str, type(None)), default=None),
            "subpop": Key((str, type(None)), default=None),
            "target": Key(str, default="phenotype", choices=("phenotype", "genetic_value")),
        },
    },
    "adjust": {
        **_COMMON,
        "data": _DATA_SCHEMA,
        "model": _MODEL_SCHEMA,
        "adjust": {
            "method": Key(str, required=True, choices=("rc", "mvng")),
            "orientation": Key(str, default="standard", choices=("standard", "swapped")),
        },
    },
    "cv": {
        **_COMMON,
        "data": _DATA_SCHEMA,
        "model": _MODEL_SCHEMA,
        "cv": {
            "methods": Key(list, required=True, item_type=str),
            "mode": Key(str, default="random", choices=("random", "grouped", "stratified")),
            "train_fraction": Key((int, float), default=0.8),
            "replications": Key(int, default=1000),
            "group_by": Key(str, default="line", choices=("line", "subpop", "none")),
            "orientation": Key(str, default="standard", choices=("standard", "swapped")),
            "target": Key(str, default="phenotype", choices=("phenotype", "genetic_value")),
            "design": Key((str, type(None)), default=None),
        },
    },
    "simulate": {
        **_COMMON,
        "data": _DATA_SCHEMA,
        "model": _MODEL_SCHEMA,
        "simulate": {
            "fit_json": Key((str, type(None)), default=None),
            "inline_fit": Key(bool, default=False),
            "c": Key((int, float), default=1.0),
            "replications": Key(int, default=100),
            "l_max": Key(int, default=10),
            "methods": Key(list, default=["grf", "grf_minus_s", "grf_minus_b"], item_type=str),
        },
    },
    "rank-report": {
        **_COMMON,
        "report": {
            "curves": Key(list, required=True, item_type=str),
            "metrics": Key(list, default=[], item_type=str),
            "formats": Key(list, default=["png"], item_type=str),
        },
    },
}


def _validate_section(section: dict, schema: dict, path: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    out = {}
    unknown = [k for k in section if k not in schema]
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key {unknown[0]!r}")
    for name, spec in schema.items():
        where = f"{path}.{name}" if path else name
        if isinstance(spec, dict):
            out[name] = _validate_section(section.get(name) or {}, spec, where)
            continue
        if name in section:
            value = section[name]
        elif spec.required:
            raise ConfigError(f"{where}: required key missing")
        else:
            value = copy.deepcopy(spec.default)
        if value is None:
            if type(None) not in spec.types:
                raise ConfigError(f"{where}: required key missing (null not allowed)")
        else:
            if isinstance(value, bool) and bool not in spec.types:
                raise ConfigError(f"{where}: expected {_typename(spec.types)}, got bool")
            if not isinstance(value, spec.types):
                raise ConfigError(
                    f"{where}: expected {_typename(spec.types)}, got {type(value).__name__}"
                )
            if spec.item_type and isinstance(value, list):
                for item in value:
                    if not isinstance(item, spec.item_type):
                        raise ConfigError(f"{where}: list items must be {spec.item_type.__name__}")
            if spec.choices and value not in spec.choices:
                raise ConfigError(f"{where}: must be one of {list(spec.choices)}, got {value!r}")
        out[name] = value
    return out


#: every per-command section name; one document may hold several of these
#: and each command validates only its own
_COMMAND_SECTIONS = frozenset(
    key for schema in SCHEMAS.values() for key, v in schema.items() if isinstance(v, dict)
)


def validate_config(config: dict, command: str) -> dict:
    """Check a raw config document against the command's schema.

    Returns the config with defaults filled in. Unknown keys are errors;
    sections belonging to other commands are tolerated at the top level
    (one document can drive a whole pipeline) but never inside a section.
    """
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    if config is None:
        config = {}
    schema = SCHEMAS[command]
    relevant = {
        k: v for k, v in config.items() if k in schema or k not in _COMMAND_SECTIONS
    }
    return _validate_section(relevant, schema, "")


def load_config(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config document must be a mapping")
    return doc


def apply_overrides(config: dict, overrides: dict) -> dict:
    """Merge CLI flag values over the document (flags win).

    Override keys use dotted paths for nested sections, e.g.
    ``simulate.c``.
    """
    out = copy.deepcopy(config)
    for dotted, value in overrides.items():
        if value is None:
            continue
        parts = dotted.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: cannot override a non-mapping key")
        node[parts[-1]] = value
    return out
