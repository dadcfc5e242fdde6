"""CSV and JSON writers.

Field CSV columns: node_index, x[, y], class, value.  Floats are written
with 17 significant digits so they round-trip exactly.  JSON payloads carry
``schema_version`` and use Python's shortest round-trip float repr.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from pathlib import Path

import numpy as np

from .domain import NodeClass, ScalarField

SCHEMA_VERSION = "1"
FLOAT_FMT = "%.17g"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def field_columns(field: ScalarField) -> list[str]:
    axes = ["x", "y"][: field.grid.coords.shape[1]]
    return ["node_index", *axes, "class", "value"]


def write_field_csv(path, field: ScalarField) -> Path:
    path = Path(path)
    grid = field.grid
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(field_columns(field))
        for k in range(grid.n_nodes):
            cls = NodeClass(int(grid.node_class[k])).name.lower()
            w.writerow([k, *(_fmt(c) for c in grid.coords[k]), cls, _fmt(field.values[k])])
    return path


def read_field_csv(path):
    """Return (coords, classes, values) from a field CSV."""
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    axes = [c for c in ("x", "y") if c in rows[0]]
    coords = np.array([[float(r[a]) for a in axes] for r in rows])
    classes = [r["class"] for r in rows]
    values = np.array([float(r["value"]) for r in rows])
    return coords, classes, values


def write_rows_csv(path, columns, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def to_jsonable(obj):
    """Convert numpy scalars/arrays, enums and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps(payload: dict) -> str:
    body = {"schema_version": SCHEMA_VERSION, **to_jsonable(payload)}
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(dumps(payload))
    return path
