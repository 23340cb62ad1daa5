"""CSV output with a fixed, reproducible byte format."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["emit_csv", "read_csv", "format_value"]


def format_value(v) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def emit_csv(records: Iterable[Sequence], schema: Sequence[str], path) -> None:
    """Write ``records`` under the header ``schema`` (RFC 4180, CRLF line ends).

    Every record must have exactly ``len(schema)`` fields.
    """
    schema = list(schema)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(schema)
        for j, rec in enumerate(records):
            rec = list(rec)
            if len(rec) != len(schema):
                raise ValueError(f"record {j} has {len(rec)} fields, schema has {len(schema)}")
            w.writerow([format_value(v) for v in rec])


def read_csv(path) -> tuple[list, list]:
    """Read back ``(header, rows)`` with numeric fields parsed as float."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []

    def parse(s):
        try:
            return float(s)
        except ValueError:
            return s

    return rows[0], [[parse(s) for s in r] for r in rows[1:]]
