"""Per-iteration trace files.

Traces are CSV with header ``k,F,grad_norm,wall_ms,bytes``.  Floats are
written with ``repr`` so reading a file back reproduces every record exactly.
"""

from __future__ import annotations

import csv

from ..errors import ParseError
from ..solvers import RunRecord

CSV_HEADER = ("k", "F", "grad_norm", "wall_ms", "bytes")


def write_trace_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([int(r.k), repr(float(r.F)), repr(float(r.grad_norm)), repr(float(r.wall_ms)), int(r.bytes)])


def read_trace_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ParseError(f"trace header must be {','.join(CSV_HEADER)}", 1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", lineno)
        try:
            out.append(RunRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3]), int(row[4])))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return out
