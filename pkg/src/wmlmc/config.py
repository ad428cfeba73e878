"""Experiment configuration files: schema, validation and conversion."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import yaml

from .driver import Method, RunConfig
from .errors import ConfigError
from .payoff import PayoffKind, PayoffSpec
from .sde import Family, ModelSpec, SchemeKind, SchemeSpec

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "scheme", "payoff", "run"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": [f.value for f in Family]},
                "params": {"type": "object", "additionalProperties": _num},
                "s0": _pos,
                "horizon": _pos,
                "rate": _num,
            },
        },
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": [k.value for k in SchemeKind]},
                "M": {"type": "integer", "minimum": 2},
                "J0": {"type": "integer", "minimum": 1},
                "antithetic": {"type": "boolean"},
            },
        },
        "payoff": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "strike"],
            "properties": {
                "kind": {"enum": [k.value for k in PayoffKind]},
                "strike": _pos,
                "interpolate": {"type": "boolean"},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["target_mse"],
            "properties": {
                "target_mse": _pos,
                "pilot_n": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "method": {"enum": [m.value for m in Method]},
                "max_level": {"type": "integer", "minimum": 0, "maximum": 30},
                "min_level": {"type": "integer", "minimum": 0},
                "bias_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "cost_model": {"enum": ["steps", "fine", "measured"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["json", "csv", "both"]},
            },
        },
    },
}


def _line_of(root, path):
    """Line (1-based) of the deepest node on ``path`` in a composed YAML tree."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, val in node.value:
                if k.value == key:
                    nxt = val
                    line = k.start_mark.line + 1
                    break
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse and schema-check a JSON config; errors carry the line number."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        try:
            root = yaml.compose(text)
        except yaml.YAMLError:
            root = None
        msgs = []
        for e in errors:
            path = list(e.absolute_path)
            line = _line_of(root, path) if root is not None else None
            where = "/".join(str(p) for p in path) or "(top level)"
            msgs.append(f"{source}:{line}: {where}: {e.message}")
        raise ConfigError("\n".join(msgs))
    return doc


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def build_specs(doc: dict):
    m = doc["model"]
    model = ModelSpec(Family(m["family"]), m.get("params", {}), s0=m.get("s0", 100.0),
                      horizon=m.get("horizon", 1.0), rate=m.get("rate", 0.05))
    s = doc["scheme"]
    scheme = SchemeSpec(SchemeKind(s["kind"]), refinement=s.get("M", 2),
                        base_steps=s.get("J0", 1), antithetic=s.get("antithetic", False))
    p = doc["payoff"]
    payoff = PayoffSpec(PayoffKind(p["kind"]), p["strike"], p.get("interpolate", True))
    return model, scheme, payoff


def run_config(doc: dict, *, seed=None, threads=1, method=None) -> RunConfig:
    """RunConfig from a validated document, with optional overrides."""
    try:
        model, scheme, payoff = build_specs(doc)
        r = doc["run"]
        return RunConfig(
            model=model, scheme=scheme, payoff=payoff,
            target_mse=r["target_mse"],
            pilot_n=r.get("pilot_n", 20),
            max_level=r.get("max_level", 12),
            min_level=r.get("min_level", 2),
            seed=r.get("seed", 0) if seed is None else seed,
            method=method or r.get("method", "WMLMC"),
            bias_fraction=r.get("bias_fraction", 0.5),
            cost_model=r.get("cost_model", "steps"),
            threads=threads,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
