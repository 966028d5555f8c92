"""JSON instances and configs, JSONL transcripts, CSV tables."""

from __future__ import annotations

import csv
import json
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import jsonschema

from .errors import InputError
from .feasibility import FeasibilitySystem
from .valuation import DiscreteFinite, Exponential, Instance, PointMass, Uniform

_NUM = {
    "oneOf": [
        {"type": "number", "minimum": 0},
        {"type": "string", "pattern": r"^\s*\d+(\.\d+)?\s*(/\s*\d+\s*)?$"},
    ]
}

DISTRIBUTION_SCHEMA = {
    "type": "object",
    "required": ["variant"],
    "oneOf": [
        {
            "properties": {"variant": {"const": "point"}, "v": _NUM},
            "required": ["v"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "variant": {"const": "discrete"},
                "values": {"type": "array", "items": _NUM, "minItems": 1},
                "probs": {"type": "array", "items": _NUM, "minItems": 1},
            },
            "required": ["values", "probs"],
            "additionalProperties": False,
        },
        {
            "properties": {"variant": {"const": "uniform"}, "a": _NUM, "b": _NUM},
            "required": ["a", "b"],
            "additionalProperties": False,
        },
        {
            "properties": {"variant": {"const": "exponential"}, "rate": _NUM},
            "required": ["rate"],
            "additionalProperties": False,
        },
    ],
}

FEASIBILITY_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "maximal_sets"},
                "sets": {"type": "array", "minItems": 1, "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
            },
            "required": ["kind", "sets"],
            "additionalProperties": False,
        },
        {
            "properties": {"kind": {"const": "knapsack"}, "demands": {"type": "array", "minItems": 1, "items": _NUM}},
            "required": ["kind", "demands"],
            "additionalProperties": False,
        },
    ],
}

INSTANCE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "distributions": {"type": "array", "minItems": 1, "items": DISTRIBUTION_SCHEMA},
        "feasibility": FEASIBILITY_SCHEMA,
        "valuation": {"type": "array", "items": _NUM},
    },
    "required": ["distributions", "feasibility"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "mechanism": {"type": "string"},
        "instance": {"oneOf": [{"type": "string"}, INSTANCE_SCHEMA]},
        "generator": {"type": "string"},
        "k": {"oneOf": [{"type": "integer", "minimum": 1}, {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "strict": {"type": "boolean"},
        "mode": {"enum": ["transcript", "batch"]},
        "delta_step": {"type": "number", "exclusiveMinimum": 0},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "price_cap": {"type": "number", "exclusiveMinimum": 0},
        "order": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "sampling_grid": {"type": "boolean"},
        "estimator_trials": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "out": {"type": "string"},
        "transcripts": {"type": "string"},
    },
    "additionalProperties": False,
}


def validate(doc, schema, what: str) -> None:
    """Raise :class:`InputError` naming the offending field."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InputError(f"{what}: field {where}: {e.message}")


def number(x):
    """JSON scalar to a number. Strings like ``"2/3"`` become exact Fractions."""
    if isinstance(x, str):
        f = Fraction(x.replace(" ", ""))
        return f if f.denominator != 1 else int(f)
    return x


def distribution_from_dict(d: dict):
    kind = d["variant"]
    if kind == "point":
        return PointMass(float(number(d["v"])))
    if kind == "discrete":
        return DiscreteFinite(tuple(number(v) for v in d["values"]), tuple(number(q) for q in d["probs"]))
    if kind == "uniform":
        return Uniform(float(number(d["a"])), float(number(d["b"])))
    if kind == "exponential":
        return Exponential(float(number(d["rate"])))
    raise InputError(f"unknown distribution variant {kind!r}")


def _feasibility(d: dict, n: int | None = None) -> FeasibilitySystem:
    if d["kind"] == "maximal_sets":
        return FeasibilitySystem.from_sets(d["sets"], n=n)
    return FeasibilitySystem.knapsack([float(number(c)) for c in d["demands"]])


def feasibility_to_dict(system: FeasibilitySystem) -> dict:
    if system.kind == "knapsack":
        return {"kind": "knapsack", "demands": list(system.demands)}
    return {"kind": "maximal_sets", "sets": [list(s) for s in system.maximal_sets]}


def instance_from_dict(doc: dict) -> tuple[Instance, list | None]:
    """Validated instance plus the optional fixed valuation stored with it."""
    validate(doc, INSTANCE_SCHEMA, "instance")
    dists = tuple(distribution_from_dict(d) for d in doc["distributions"])
    system = _feasibility(doc["feasibility"], n=len(dists))
    inst = Instance(dists, system, name=doc.get("name", "instance"))
    v = doc.get("valuation")
    if v is not None:
        if len(v) != inst.n:
            raise InputError(f"instance: field valuation: expected {inst.n} entries, got {len(v)}")
        v = [float(number(x)) for x in v]
    return inst, v


def instance_to_dict(inst: Instance) -> dict:
    return {
        "name": inst.name,
        "distributions": [d.to_dict() for d in inst.distributions],
        "feasibility": feasibility_to_dict(inst.feasibility),
    }


def load_json(path: str | Path, what: str):
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} file {p} does not exist")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{what} file {p}: line {e.lineno} column {e.colno}: {e.msg}") from None


def load_instance(path: str | Path) -> tuple[Instance, list | None]:
    return instance_from_dict(load_json(path, "instance"))


def load_config(path: str | Path) -> dict:
    doc = load_json(path, "config")
    validate(doc, CONFIG_SCHEMA, "config")
    return doc


def dumps(obj) -> str:
    """Canonical JSON (sorted keys, no spaces) so identical runs give identical bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(x):
    import numpy as np

    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(dumps(r) + "\n")


def write_csv(path: str | Path, rows: list[dict], columns: Iterable[str], config: dict) -> None:
    """CSV with a leading ``# config:`` line holding the resolved config."""
    columns = list(columns)
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + dumps(config) + "\n")
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _cell(r.get(c)) for c in columns})


def _cell(x):
    if isinstance(x, float):
        return repr(x)
    return x


def read_csv(path: str | Path) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        first = fh.readline()
        config = json.loads(first[len("# config: ") :]) if first.startswith("# config: ") else {}
        if not first.startswith("# config: "):
            fh.seek(0)
        return config, list(csv.DictReader(fh))
