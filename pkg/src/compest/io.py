"""CSV reading and writing for count and composition matrices.

Input layout: an optional header row of taxon names, then one row per sample,
either ``sample_id,c1,...,cp`` or bare numbers. Header and sample-id column
are detected from non-numeric cells unless forced by the caller. Numbers are
written with 17 significant digits so doubles round-trip exactly.
"""
from __future__ import annotations

import csv
import io
import os
from typing import Optional

import numpy as np

from .core import (
    CompositionMatrix,
    CountMatrix,
    SimplexBounds,
    validate_composition,
    validate_counts,
)
from .exceptions import ValidationError

INDEX_NAME = "sample_id"


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_table(text: str, delimiter: str = ",", header: Optional[bool] = None,
                index_col: Optional[bool] = None):
    """Split CSV text into (values, sample labels, taxon labels)."""
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter)
            if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError("input has no rows")
    rows = [[c.strip() for c in r] for r in rows]
    if header is None:
        header = not all(_is_number(c) for c in rows[0][1:]) or (
            len(rows) > 1 and not _is_number(rows[0][0]) and _is_number(rows[1][0]))
    head = rows[0] if header else None
    body = rows[1:] if header else rows
    if not body:
        raise ValidationError("input has a header but no data rows")
    if index_col is None:
        index_col = any(not _is_number(r[0]) for r in body)
        if head is not None and not index_col:
            index_col = head[0].lower() in {INDEX_NAME, "sample", "id", ""} and len(head) == len(body[0])
    widths = {len(r) for r in body}
    if len(widths) != 1:
        raise ValidationError(f"rows have differing numbers of fields: {sorted(widths)}")
    samples = [r[0] for r in body] if index_col else None
    cells = [r[1:] for r in body] if index_col else body
    try:
        values = np.array([[float(c) for c in r] for r in cells], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"non-numeric value in data: {exc}") from None
    taxa = None
    if head is not None:
        names = head[1:] if (index_col and len(head) == len(body[0])) else head
        if len(names) != values.shape[1]:
            raise ValidationError(
                f"header has {len(names)} taxon names for {values.shape[1]} columns")
        taxa = names
    return values, samples, taxa


def _read(path: str) -> str:
    with open(path, newline="") as fh:
        return fh.read()


def read_counts(path: str, delimiter: str = ",", header: Optional[bool] = None,
                index_col: Optional[bool] = None) -> CountMatrix:
    values, samples, taxa = parse_table(_read(path), delimiter, header, index_col)
    return validate_counts(values, samples=samples, taxa=taxa)


def read_composition(path: str, bounds: Optional[SimplexBounds] = None,
                     delimiter: str = ",", header: Optional[bool] = None,
                     index_col: Optional[bool] = None) -> CompositionMatrix:
    values, samples, taxa = parse_table(_read(path), delimiter, header, index_col)
    return validate_composition(values, bounds, samples=samples, taxa=taxa)


def format_number(x) -> str:
    return f"{float(x):.17g}"


def matrix_csv(values, samples=None, taxa=None, delimiter: str = ",",
               integer: bool = False) -> str:
    """Render a matrix with a header row and a ``sample_id`` column."""
    values = np.asarray(values)
    n, p = values.shape
    samples = list(samples) if samples is not None else [f"s{i + 1}" for i in range(n)]
    taxa = list(taxa) if taxa is not None else [f"taxon{j + 1}" for j in range(p)]
    buf = io.StringIO()
    out = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    out.writerow([INDEX_NAME, *taxa])
    fmt = (lambda v: str(int(v))) if integer else format_number
    for name, row in zip(samples, values):
        out.writerow([name, *(fmt(v) for v in row)])
    return buf.getvalue()


def write_text(path: str, text: str) -> None:
    """Write atomically: a failed run never leaves a truncated file behind."""
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
