"""Plain TSV readers and writers for matrices and score tables."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError


def write_matrix(path, id_header: str, ids: Sequence[str], columns: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(id_header + "\t" + "\t".join(columns) + "\n")
        for row_id, row in zip(ids, matrix):
            fh.write(str(row_id) + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def read_matrix(path) -> tuple[list[str], list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    ids, rows = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ParseError(f"{path}: header with an id column and at least one value column required")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}", lineno)
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value", lineno) from None
            ids.append(row[0])
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    return ids, header[1:], matrix


def read_labels(path) -> dict[str, int]:
    """Labels from ``doc_id<TAB>label`` or from a metadata file (``label`` last column)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}", lineno)
            label = row[-1]
            if label == "-":
                continue
            if label not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: label must be 0 or 1", lineno)
            out[row[0]] = int(label)
    return out
