"""Plain CSV tables for command output.

Floats are written with ``repr`` so every table reads back bit-exactly.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_table(path, header: Sequence[str], rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([_fmt(v) for v in row])


def _parse(s: str):
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


def read_table(path) -> tuple[list[str], list[list]]:
    """Header and rows; numeric-looking cells become ``int``/``float``, empty cells ``None``."""
    with open(Path(path), newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise ValueError(f"{path}: empty table") from None
        rows = []
        for i, row in enumerate(r, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
            rows.append([_parse(c) for c in row])
    return header, rows


def column(table: tuple[list[str], list[list]], name: str) -> list:
    header, rows = table
    j = header.index(name)
    return [row[j] for row in rows]


def is_nan(v) -> bool:
    return isinstance(v, float) and math.isnan(v)
