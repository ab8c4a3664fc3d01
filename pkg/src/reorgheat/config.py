"""Strict INI-style run configuration.

Every key must appear in :data:`SCHEMA`; unknown sections or keys, and values
that fail conversion, raise :class:`~reorgheat.errors.ValidationError` with
the offending line number.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _positive(text):
    v = float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _count(text):
    v = int(text)
    if v < 0:
        raise ValueError("must be a non-negative integer")
    return v


def _grid(text):
    """``a, b, c`` or ``start:stop:num`` (inclusive linspace)."""
    text = text.strip()
    if not text:
        return ()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("range must be start:stop:num")
        vals = np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
    else:
        vals = [float(p) for p in text.split(",") if p.strip()]
    vals = tuple(float(v) for v in vals)
    if any(v <= 0 for v in vals):
        raise ValueError("temperatures must be positive")
    return vals


def _choice(*options):
    def conv(text):
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return conv


def _list_of(*options):
    def conv(text):
        items = [t.strip().lower() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in options]
        if bad or not items:
            raise ValueError(f"expected a list drawn from {', '.join(options)}")
        return tuple(items)
    return conv


SCHEMA = {
    "model": {
        "kind": (_choice("spin", "oscillator"), "spin"),
        "epsilon0": (_positive, 1.0),
        "omega0": (_positive, 1.0),
        "fock_dim": (_count, 30),
        "counter_term": (_bool, True),
        "identity_component": (_bool, True),
        "initial_state": (_choice("plus", "coherent", "vacuum"), "plus"),
        "alpha": (float, 1.0),
    },
    "baths": {
        "lambda1": (_nonneg, 3e-3),
        "lambda2": (_nonneg, 1e-3),
        "cutoff1": (_positive, 100.0),
        "cutoff2": (_positive, 100.0),
    },
    "temperatures": {
        "t1": (_positive, 1.0),
        "t2": (_positive, 1.2),
        "t1_grid": (_grid, ()),
        "t2_grid": (_grid, ()),
        "line": (_grid, ()),
        "ratio": (_positive, 1.2),
    },
    "methods": {
        "references": (_list_of("reorganised", "conventional"), ("reorganised", "conventional")),
        "flavors": (_list_of("gkls", "redfield"), ("gkls", "redfield")),
        "exact": (_choice("auto", "quadrature", "heom", "none"), "auto"),
    },
    "heom": {
        "n_matsubara": (_count, 0),
        "depth": (_count, 3),
        "terminator": (_bool, True),
        "shifted_terminator": (_bool, False),
        "sweep_tol": (_positive, 1e-3),
        "max_rounds": (_count, 3),
        "fock_dim": (_count, 18),
    },
    "dynamics": {
        "t_final": (_nonneg, 0.0),
        "relaxation_times": (_positive, 3.0),
        "n_points": (_count, 241),
    },
    "run": {
        "seed": (int, 0),
        "label": (str, "run"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: ``sections[name][key]`` with defaults filled in."""

    sections: dict
    source: str = "<defaults>"
    explicit: frozenset = field(default_factory=frozenset)

    def __getitem__(self, item):
        return self.sections[item]

    def get(self, section, key):
        return self.sections[section][key]

    def is_set(self, section, key):
        return (section, key) in self.explicit

    def with_values(self, **updates):
        """Copy with ``section__key=value`` overrides (for programmatic use)."""
        secs = {k: dict(v) for k, v in self.sections.items()}
        explicit = set(self.explicit)
        for name, value in updates.items():
            sec, key = name.split("__", 1)
            if sec not in secs or key not in secs[sec]:
                raise ValidationError(f"unknown configuration key {sec}.{key}")
            secs[sec][key] = value
            explicit.add((sec, key))
        out = RunConfig(secs, self.source, frozenset(explicit))
        validate(out)
        return out


def defaults() -> RunConfig:
    return RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


_SECTION = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_map(text):
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION.match(line)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), no)
            continue
        m = _KEY.match(line)
        if m and section is not None and not line[:1].isspace():
            out.setdefault((section, m.group(1).strip().lower()), no)
    return out


def parse_config(text: str, source="<string>") -> RunConfig:
    """Parse configuration text.

    Raises
    ------
    ValidationError
        Syntax errors, unknown sections or keys, bad values; messages carry
        ``source:line``.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        where = f"{source}:{line}" if line else source
        raise ValidationError(f"{where}: {exc.message if hasattr(exc, 'message') else exc}") from exc
    lines = _line_map(text)
    cfg = defaults()
    secs = {k: dict(v) for k, v in cfg.sections.items()}
    explicit = set()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ValidationError(f"{source}:{lines.get((section, None), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            lineno = lines.get((section, key), "?")
            if key not in SCHEMA[section]:
                raise ValidationError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                secs[section][key] = conv(raw)
            except (ValueError, TypeError) as exc:
                raise ValidationError(f"{source}:{lineno}: {section}.{key}: {exc}") from exc
            explicit.add((section, key))
    out = RunConfig(secs, source, frozenset(explicit))
    validate(out, lines)
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read configuration {path}: {exc.strerror}") from exc
    return parse_config(text, source=str(path))


def validate(cfg: RunConfig, lines=None):
    """Cross-field checks."""
    lines = lines or {}

    def fail(section, key, msg):
        raise ValidationError(f"{cfg.source}:{lines.get((section, key), '?')}: {section}.{key}: {msg}")

    kind = cfg["model"]["kind"]
    if kind == "oscillator" and cfg["model"]["fock_dim"] < 10:
        fail("model", "fock_dim", "must be at least 10")
    if kind == "spin" and cfg["model"]["initial_state"] == "coherent":
        fail("model", "initial_state", "coherent states apply to the oscillator only")
    if cfg["heom"]["fock_dim"] < 10:
        fail("heom", "fock_dim", "must be at least 10")
    if cfg["dynamics"]["n_points"] < 2:
        fail("dynamics", "n_points", "need at least two time points")
    return cfg
