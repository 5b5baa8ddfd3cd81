"""Matrix Market and plain vector file I/O."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp


def write_matrix_market(path, matrix, comment: str = "") -> None:
    """Write a symmetric matrix in coordinate format (lower triangle, 1-based)."""
    coo = sp.coo_matrix(matrix)
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, coo, comment=comment, field="real", symmetry="symmetric", precision=17)
    Path(path).write_bytes(buf.getvalue())


def read_matrix_market(path) -> sp.csr_matrix:
    """Read a Matrix Market file into CSR. Symmetric files are expanded."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", "replace").lower()
    if not header.startswith("%%matrixmarket"):
        raise ValueError(f"{path}: missing %%MatrixMarket header")
    tokens = header.split()
    if len(tokens) < 5 or tokens[1] != "matrix" or tokens[3] not in ("real", "integer"):
        raise ValueError(f"{path}: unsupported Matrix Market header {header.strip()!r}")
    mat = scipy.io.mmread(str(path))
    return sp.csr_matrix(mat, dtype=float)


def read_vector(path) -> np.ndarray:
    """Read a vector stored as a JSON array or as one scalar per line."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("["):
        values = json.loads(stripped)
    else:
        values = [float(line) for line in text.split() if line.strip()]
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{path}: expected a flat list of scalars")
    return arr


def write_vector(path, u, as_json: bool = False) -> None:
    u = np.asarray(u, dtype=float)
    if as_json:
        Path(path).write_text(json.dumps([float(x) for x in u]) + "\n")
    else:
        Path(path).write_text("".join(f"{x:.17g}\n" for x in u))
