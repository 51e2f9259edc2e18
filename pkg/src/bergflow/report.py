"""Rate fitting, CSV emission and report comparison."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

MODELS = ("power", "exponential")


@dataclass(frozen=True)
class RateFit:
    model: str
    rate: float
    prefactor: float
    r2: float


def fit_rate(x, y, model: str = "power") -> RateFit:
    """Least-squares fit of ``y = A x^p`` (power) or ``y = A e^{p x}`` (exponential)."""
    if model not in MODELS:
        raise InputError(f"unknown model {model!r}; expected one of {MODELS}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise InputError("rate fit needs at least three (x, y) pairs")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise InputError("rate fit needs positive finite y values")
    if model == "power" and np.any(x <= 0):
        raise InputError("power-law fit needs positive x values")
    if np.ptp(x) == 0:
        raise InputError("degenerate series: all x values coincide")
    X = np.log(x) if model == "power" else x
    Y = np.log(y)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    total = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 if total == 0 else float(1 - np.sum(resid**2) / total)
    return RateFit(model, float(slope), float(math.exp(intercept)), r2)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str | Path, columns: list[str], rows) -> None:
    """Deterministic CSV: fixed header, ``repr`` floats, ``\\n`` line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path} is empty")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return rows[0], data.reshape(-1, len(rows[0]))


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for key in sorted(obj):
            yield from _flatten(obj[key], f"{prefix}{key}.")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield prefix[:-1], obj


def report_diff(a: str | Path, b: str | Path, rtol: float = 1e-12, atol: float = 0.0) -> dict:
    """Field-wise comparison of two report directories.

    Raises :class:`InputError` when the scenarios differ.
    """
    a, b = Path(a), Path(b)
    sa = json.loads((a / "summary.json").read_text())
    sb = json.loads((b / "summary.json").read_text())
    if sa.get("scenario") != sb.get("scenario"):
        raise InputError(f"scenario mismatch: {sa.get('scenario')!r} vs {sb.get('scenario')!r}")
    diff = {"summary": {}, "series": {}}
    fa, fb = dict(_flatten(sa)), dict(_flatten(sb))
    for key in sorted(set(fa) | set(fb)):
        if key.startswith("version"):
            continue
        va, vb = fa.get(key), fb.get(key)
        if _differs(va, vb, rtol, atol):
            diff["summary"][key] = {"a": va, "b": vb}
    csv_a = {p.name for p in a.glob("*.csv")}
    csv_b = {p.name for p in b.glob("*.csv")}
    for name in sorted(csv_a | csv_b):
        if name not in csv_a or name not in csv_b:
            diff["series"][name] = {"status": "only in " + ("a" if name in csv_a else "b")}
            continue
        ha, da = read_csv(a / name)
        hb, db = read_csv(b / name)
        if ha != hb or da.shape != db.shape:
            diff["series"][name] = {"status": "structure", "a": [ha, list(da.shape)], "b": [hb, list(db.shape)]}
            continue
        with np.errstate(invalid="ignore"):
            gap = np.abs(da - db)
            bound = atol + rtol * np.maximum(np.abs(da), np.abs(db))
            bad = (gap > bound) & ~(np.isnan(da) & np.isnan(db))
        if np.any(bad):
            cols = [ha[j] for j in range(len(ha)) if np.any(bad[:, j])]
            diff["series"][name] = {"status": "values", "columns": cols, "max_abs": float(np.nanmax(np.where(bad, gap, 0)))}
    return diff


def _differs(va, vb, rtol, atol) -> bool:
    if isinstance(va, (int, float)) and isinstance(vb, (int, float)) and not isinstance(va, bool):
        if math.isnan(va) and math.isnan(vb):
            return False
        return abs(va - vb) > atol + rtol * max(abs(va), abs(vb))
    return va != vb


def is_empty_diff(diff: dict) -> bool:
    return not diff["summary"] and not diff["series"]
