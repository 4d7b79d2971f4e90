"""Matrix text files and CSV tables.

Matrix format: the first line holds the integer dimension d, followed by d
lines of d whitespace-separated decimal values.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import MatrixFormatError
from .symcore import CovMatrix, SymMatrix

__all__ = [
    "parse_matrix",
    "load_matrix",
    "format_matrix",
    "store_matrix",
    "format_value",
    "format_csv",
    "store_csv",
    "data_path",
]


def data_path(name: str) -> Path:
    """Path of a matrix file shipped with the package."""
    return Path(__file__).parent / "data" / name


def parse_matrix(text: str, psd: bool = True):
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MatrixFormatError("empty matrix file")
    try:
        d = int(lines[0])
    except ValueError:
        raise MatrixFormatError(f"first line must be the integer dimension, got {lines[0]!r}") from None
    if d < 1:
        raise MatrixFormatError(f"dimension must be positive, got {d}")
    rows = lines[1:]
    if len(rows) != d:
        raise MatrixFormatError(f"expected {d} matrix rows, found {len(rows)}")
    values = []
    for i, ln in enumerate(rows):
        parts = ln.split()
        if len(parts) != d:
            raise MatrixFormatError(f"row {i} has {len(parts)} values, expected {d}")
        try:
            values.append([float(p) for p in parts])
        except ValueError as exc:
            raise MatrixFormatError(f"row {i}: {exc}") from None
    return CovMatrix(values) if psd else SymMatrix(values)


def load_matrix(path, psd: bool = True):
    """Read a matrix file; symmetry (and PSD-ness unless ``psd=False``) is enforced."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_matrix(fh.read(), psd=psd)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_matrix(A) -> str:
    a = np.asarray(A.values if isinstance(A, SymMatrix) else A)
    out = [str(a.shape[0])]
    out += [" ".join(format_value(float(v)) for v in row) for row in a]
    return "\n".join(out) + "\n"


def store_matrix(path, A) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_matrix(A))


def format_csv(header: Sequence[str], rows: Iterable[Sequence], provenance: str | None = None) -> str:
    parts = []
    if provenance is not None:
        parts.append("# " + provenance.replace("\n", " "))
    parts.append(",".join(header))
    for row in rows:
        parts.append(",".join(format_value(v) for v in row))
    return "\n".join(parts) + "\n"


def store_csv(path, header: Sequence[str], rows: Iterable[Sequence], provenance: str | None = None) -> None:
    """Write header and rows with LF endings and 17 significant digits; ``-`` means stdout."""
    text = format_csv(header, rows, provenance)
    if str(path) == "-":
        import sys

        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
