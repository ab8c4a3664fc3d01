"""Frozen reference values with provenance, and their regression check.

A golden file is JSON::

    {"schema": "reorgheat-golden/1",
     "entries": [{"name": ..., "quantity": ..., "params": {...},
                  "value": ..., "tolerance": {"kind": "rel"|"abs"|"max", "value": ...},
                  "provenance": {...}}]}

``quantity`` names an evaluator in :data:`EVALUATORS`; the regression
recomputes each entry from ``params`` and compares within its tolerance.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import RegressionError, ValidationError

SCHEMA_ID = "reorgheat-golden/1"
TOLERANCE_KINDS = ("rel", "abs", "max")


def default_golden_path() -> Path:
    return Path(str(resources.files("reorgheat") / "data" / "golden.json"))


def load_golden(path=None) -> dict:
    """Read and schema-check a golden file."""
    path = default_golden_path() if path is None else Path(path)
    if not path.exists():
        raise RegressionError(f"golden file {path} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RegressionError(f"golden file {path} is not valid JSON: {exc}") from exc
    check_schema(data)
    return data


def check_schema(data):
    if not isinstance(data, dict) or data.get("schema") != SCHEMA_ID:
        raise RegressionError(f"incompatible golden schema (expected {SCHEMA_ID!r})")
    entries = data.get("entries")
    if not isinstance(entries, list) or not entries:
        raise RegressionError("golden file has no entries")
    names = set()
    for e in entries:
        for key in ("name", "quantity", "params", "value", "tolerance", "provenance"):
            if key not in e:
                raise RegressionError(f"golden entry {e.get('name', '?')!r} lacks {key!r}")
        if e["name"] in names:
            raise RegressionError(f"duplicate golden entry {e['name']!r}")
        names.add(e["name"])
        tol = e["tolerance"]
        if tol.get("kind") not in TOLERANCE_KINDS or not isinstance(tol.get("value"), (int, float)):
            raise RegressionError(f"golden entry {e['name']!r} has a malformed tolerance")
    return data


def write_golden(entries, path):
    data = {"schema": SCHEMA_ID, "entries": list(entries)}
    check_schema(data)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class RegressionItem:
    name: str
    expected: float
    computed: float
    tolerance_kind: str
    tolerance: float
    drift: float
    passed: bool


def compare(expected, computed, kind, tol):
    """Return ``(drift, passed)`` for one value."""
    if kind == "rel":
        scale = abs(expected) if expected != 0 else 1.0
        drift = abs(computed - expected) / scale
    elif kind == "abs":
        drift = abs(computed - expected)
    else:       # computed must not exceed the bound stored as tolerance
        drift = computed
    return drift, bool(drift <= tol)


def run_regression(data, evaluators=None, only=None):
    """Recompute every entry; returns a list of :class:`RegressionItem`."""
    from .experiments import EVALUATORS
    evaluators = EVALUATORS if evaluators is None else evaluators
    out = []
    for e in data["entries"]:
        if only is not None and e["name"] not in only:
            continue
        fn = evaluators.get(e["quantity"])
        if fn is None:
            raise ValidationError(f"unknown golden quantity {e['quantity']!r}")
        got = float(fn(**e["params"]))
        drift, ok = compare(float(e["value"]), got, e["tolerance"]["kind"], e["tolerance"]["value"])
        out.append(RegressionItem(e["name"], float(e["value"]), got, e["tolerance"]["kind"],
                                  float(e["tolerance"]["value"]), drift, ok))
    return out
