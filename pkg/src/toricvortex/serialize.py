"""Deterministic JSON and CSV emission.

Floats are always written with 17 significant digits so that identical runs
produce byte-identical files.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

FLOAT_FORMAT = ".17g"


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, FLOAT_FORMAT)


def to_plain(obj):
    """Convert numpy scalars/arrays, enums, fractions and tuples to JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, enum.Enum):
        return to_plain(obj.value)
    if isinstance(obj, Fraction):
        return [obj.numerator, obj.denominator]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(obj, indent: int = 2) -> str:
    return _emit(to_plain(obj), indent, 0) + "\n"


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_emit(v, indent, level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return fmt_float(obj)
    return json.dumps(obj)


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps(obj))


def write_rows(path: Path, rows: list[dict]) -> None:
    """CSV with a header taken from the first row."""
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0])
        writer.writerow(keys)
        for row in rows:
            writer.writerow([fmt_float(row[k]) if isinstance(row[k], float) else row[k] for k in keys])


def write_grid(path: Path, values: np.ndarray, header: dict) -> None:
    """2-D grid as CSV, preceded by one ``# {json}`` header line."""
    values = np.asarray(values, float)
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(to_plain(header), sort_keys=True) + "\n")
        for row in values.reshape(values.shape[0], -1):
            fh.write(",".join(fmt_float(x) for x in row) + "\n")


def read_grid(path: Path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path} lacks a JSON header line")
        header = json.loads(first[2:])
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, values
