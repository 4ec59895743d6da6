"""File formats: JSON documents and CSV tables.

CSV files are UTF-8 with a header row and ``.`` as decimal separator.
Floats are written with their shortest round-trip repr (always with a ``.``
or exponent), so they read back bit-exact and stay distinct from integers.
JSON floats use Python's shortest round-trip repr; NaN and infinities are
written as ``null``.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, fields, rows):
    """Write dict rows; missing keys become empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([format_value(row.get(f)) for f in fields])
    return path


def parse_value(s):
    """Inverse of :func:`format_value` for numbers; other text is kept."""
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path):
    """Returns ``(fields, rows)`` with numeric cells parsed."""
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        fields = next(r)
        rows = [{f: parse_value(v) for f, v in zip(fields, line)} for line in r]
    return fields, rows
