"""Flat ``key = value`` experiment configuration with a typed schema.

Lines starting with ``#`` are comments. ``include = other.cfg`` splices in
another file (resolved relative to the including file); later keys override
earlier ones. Every key has a default, and the resolved configuration is
echoed into each report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

SCENARIOS = (
    "flow",
    "bergman",
    "balanced",
    "double-scaling",
    "bouche-tian",
    "family-flow",
    "family-bergman",
    "psh-check",
)


@dataclass(frozen=True)
class Field:
    kind: type
    default: object
    choices: tuple = ()
    positive: bool = False
    nonnegative: bool = False
    help: str = ""


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


SCHEMA: dict[str, Field] = {
    "scenario": Field(str, "flow", SCENARIOS, help="experiment to run"),
    "geometry": Field(str, "elliptic", ("elliptic", "p1"), help="fiber model"),
    "tau_re": Field(float, 0.0),
    "tau_im": Field(float, 1.0, positive=True),
    "tau_slope_re": Field(float, 0.0, help="family: tau(s) = tau + slope*s"),
    "tau_slope_im": Field(float, 0.0),
    "degree": Field(int, 1, positive=True),
    "nx": Field(int, 64, positive=True),
    "ny": Field(int, 64, positive=True),
    "line_n": Field(int, 512, positive=True),
    "line_T": Field(float, 16.0, positive=True),
    "measure": Field(str, "fixed", ("fixed", "twisted", "anticanonical")),
    "normalized": Field(bool, True),
    "measure_amplitude": Field(float, 0.0, help="base density 1 + a*cos(2 pi x)"),
    "init_amplitude": Field(float, 0.0, help="u0 = a*cos(2 pi x) (torus) or a*sech^2(t/2) (line)"),
    "init_offset": Field(float, 0.0),
    "scheme": Field(str, "semi-implicit", ("semi-implicit", "explicit")),
    "dt": Field(float, 1e-2, positive=True),
    "t_end": Field(float, 30.0, nonnegative=True),
    "record_every": Field(int, 100, positive=True),
    "k": Field(int, 4, positive=True),
    "k_list": Field(list, [8, 16, 32]),
    "m_max": Field(int, 500, nonnegative=True),
    "tol": Field(float, 1e-10, positive=True),
    "converge_tol": Field(float, 1e-6, positive=True, help="flow: required distance to the Newton solution"),
    "t_star": Field(float, 1.0, nonnegative=True),
    "setting": Field(str, "cy", ("cy", "twisted"), help="family scenarios"),
    "hs": Field(float, 0.02, positive=True, help="family base lattice spacing"),
    "radius": Field(int, 3, positive=True, help="family base lattice radius"),
    "order": Field(int, 4, (2, 4)),
    "positivity_eps": Field(float, 0.1),
    "output": Field(str, "", help="report directory (default: <root>/<scenario>)"),
}


def _coerce(key: str, raw: str, entry: Field):
    raw = raw.strip()
    try:
        if entry.kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            value = low in ("true", "1", "yes")
        elif entry.kind is list:
            value = _ints(raw)
        elif entry.kind is int:
            value = int(raw)
        elif entry.kind is float:
            value = float(raw)
        else:
            value = raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} as {entry.kind.__name__}") from exc
    return value


def _validate(cfg: dict) -> None:
    for key, value in cfg.items():
        entry = SCHEMA[key]
        if entry.choices and value not in entry.choices:
            raise ConfigError(f"{key}: {value!r} is not one of {list(entry.choices)}")
        values = value if isinstance(value, list) else [value]
        for v in values:
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                if not math.isfinite(v):
                    raise ConfigError(f"{key}: must be finite")
                if entry.positive and v <= 0:
                    raise ConfigError(f"{key}: must be positive, got {v}")
                if entry.nonnegative and v < 0:
                    raise ConfigError(f"{key}: must be nonnegative, got {v}")
    if cfg["scenario"] == "double-scaling" and len(cfg["k_list"]) < 2:
        raise ConfigError("k_list: double scaling needs at least two levels")
    if cfg["scenario"] == "bouche-tian" and len(cfg["k_list"]) < 3:
        raise ConfigError("k_list: the rate fit needs at least three levels")
    if any(k <= 0 for k in cfg["k_list"]):
        raise ConfigError("k_list: levels must be positive")
    for key in ("nx", "ny"):
        if cfg[key] < 8 or cfg[key] % 2:
            raise ConfigError(f"{key}: must be an even integer >= 8")
    if cfg["measure"] == "anticanonical" and (cfg["geometry"] != "p1" or cfg["degree"] != 2):
        raise ConfigError("measure: anticanonical requires geometry = p1 and degree = 2")
    if cfg["measure"] == "fixed" and not cfg["normalized"]:
        raise ConfigError("normalized: a fixed measure is always normalized")


def parse_text(text: str, base_dir: Path | None = None, _seen: tuple = ()) -> dict:
    """Raw key/value pairs of a config text, includes expanded."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "include":
            path = (base_dir or Path.cwd()) / raw
            if path.resolve() in _seen:
                raise ConfigError(f"include cycle through {path}")
            if not path.is_file():
                raise ConfigError(f"line {lineno}: included file {path} not found")
            out.update(parse_text(path.read_text(), path.parent, _seen + (path.resolve(),)))
            continue
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw, SCHEMA[key])
    return out


def resolve(values: dict) -> dict:
    """Fill defaults and validate; the result holds every schema key."""
    unknown = set(values) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    cfg = {key: entry.default for key, entry in SCHEMA.items()}
    cfg["k_list"] = list(SCHEMA["k_list"].default)
    cfg.update(values)
    _validate(cfg)
    return cfg


def load(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return resolve(parse_text(path.read_text(), path.parent, (path.resolve(),)))


def loads(text: str) -> dict:
    return resolve(parse_text(text))


def dumps(cfg: dict) -> str:
    lines = []
    for key in SCHEMA:
        value = cfg[key]
        if isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
