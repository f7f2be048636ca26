"""Run configurations: JSON files validated against a schema.

Errors name the offending key and the line it sits on.
"""
from __future__ import annotations

import json
from dataclasses import fields as dc_fields

import jsonschema

from .solver import SolverConfig

__all__ = ["ConfigError", "SCHEMA", "load_config", "parse_config", "key_lines"]


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_int = {"type": "integer"}
_matrix = {
    "type": "array",
    "items": {"type": "array", "items": {"oneOf": [
        _num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}},
}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_solver_props = {f.name: (_int if f.type == "int" else _num) for f in dc_fields(SolverConfig)}

SCHEMA = _obj({
    "n": {"type": "integer", "minimum": 2, "maximum": 4},
    "N": {"type": "integer", "minimum": 2},
    "metric": _obj({
        "kind": {"enum": ["constant", "conformal", "perturbed"]},
        "H": _matrix,
        "seed": _int,
        "amplitude": {"type": "number", "minimum": 0},
        "bandlimit": {"type": "integer", "minimum": 1},
        "gauduchon_normalize": {"type": "boolean"},
    }, ["kind"]),
    "rhs": dict(_obj({
        "kind": {"enum": ["mms", "explicit", "zero"]},
        "seed": _int,
        "amplitude": {"type": "number", "exclusiveMinimum": 0},
        "bandlimit": {"type": "integer", "minimum": 1},
        "path": {"type": "string"},
    }, ["kind"]), **{"if": {"properties": {"kind": {"const": "explicit"}}},
                     "then": {"required": ["path"]}}),
    "solver": _obj(_solver_props),
    "hodge": _obj({
        "kind": {"enum": ["BottChern", "Aeppli", "DdbarBar", "Dolbeault", "DeRham"]},
        "p": _int, "q": _int, "seed": _int,
        "bandlimit": {"type": "integer", "minimum": 1},
        "strategy": {"enum": ["auto", "per-mode", "krylov"]},
    }),
    "cone": _obj({
        "seed": _int,
        "bandlimit": {"type": "integer", "minimum": 1},
        "radius_fractions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
    }),
    "outputs": _obj({
        "report": {"type": "string"},
        "dump_dir": {"type": "string"},
        "csv_slice": _obj({
            "fixed": {"type": "array", "items": {"type": ["integer", "null"]}},
            "path": {"type": "string"},
        }, ["fixed"]),
    }),
}, ["n", "N", "metric"])


def key_lines(text: str) -> dict:
    """Map each key path (tuple) of a JSON document to its 1-based line."""
    dec = json.JSONDecoder()
    ws = " \t\r\n"
    out = {}

    def skip(i):
        while i < len(text) and text[i] in ws:
            i += 1
        return i

    def walk(i, path):
        i = skip(i)
        if text[i] == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                i = skip(i)
                key, j = json.decoder.scanstring(text, i + 1)
                out[path + (key,)] = text.count("\n", 0, i) + 1
                j = skip(j)
                i = walk(j + 1, path + (key,))
                i = skip(i)
                if text[i] == "}":
                    return i + 1
                i += 1
        if text[i] == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                out[path + (k,)] = text.count("\n", 0, i) + 1
                i = skip(walk(i, path + (k,)))
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = dec.raw_decode(text, i)
        return end

    walk(0, ())
    return out


def _line_of(lines, path):
    path = tuple(path)
    while path and path not in lines:
        path = path[:-1]
    return lines.get(path, 1)


def parse_config(text: str, source: str = "<config>") -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}: invalid JSON: {e.msg}") from e
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = key_lines(text)
        msgs = []
        for e in errors:
            path = list(e.absolute_path)
            if e.validator == "additionalProperties":
                extra = [k for k in e.instance if k not in e.schema.get("properties", {})]
                for k in extra:
                    ln = _line_of(lines, path + [k])
                    msgs.append(f"{source}:{ln}: unknown key {'.'.join(map(str, path + [k]))!r}")
                continue
            ln = _line_of(lines, path)
            where = ".".join(map(str, path)) or "<root>"
            msgs.append(f"{source}:{ln}: {where}: {e.message}")
        raise ConfigError("\n".join(msgs))
    n = cfg["n"]
    if cfg["N"] % 2:
        raise ConfigError(f"{source}:{_line_of(key_lines(text), ['N'])}: N must be even")
    H = cfg["metric"].get("H")
    if H is not None and (len(H) != n or any(len(r) != n for r in H)):
        raise ConfigError(f"{source}:{_line_of(key_lines(text), ['metric', 'H'])}: H must be {n} x {n}")
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, str(path))


def complex_matrix(H):
    """Entries may be numbers or ``[re, im]`` pairs."""
    return [[complex(x[0], x[1]) if isinstance(x, list) else complex(x) for x in row] for row in H]


def solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(**cfg.get("solver", {}))
