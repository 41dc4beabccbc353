"""Matrix Market coordinate files and plain-text vectors."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..core import LinearOperator

__all__ = ["MatrixMarketError", "load_matrix_market", "save_matrix_market", "load_vector",
           "save_vector"]

_FIELDS = ("real", "integer", "double")
_SYMMETRY = ("general", "symmetric")


class MatrixMarketError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def load_matrix_market(path) -> LinearOperator:
    """Read a real coordinate Matrix Market file.

    Symmetric storage lists the lower triangle; it is expanded on load.
    Duplicate entries are summed.
    """
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError(path, 1, "empty file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "%%MatrixMarket" or head[1].lower() != "matrix":
        raise MatrixMarketError(path, 1, "malformed header")
    fmt, fld, sym = (h.lower() for h in head[2:])
    if fmt != "coordinate":
        raise MatrixMarketError(path, 1, f"unsupported format {fmt!r}")
    if fld not in _FIELDS:
        raise MatrixMarketError(path, 1, f"unsupported field {fld!r}")
    if sym not in _SYMMETRY:
        raise MatrixMarketError(path, 1, f"unsupported symmetry {sym!r}")
    lineno = 1
    size = None
    rows, cols, vals = [], [], []
    for lineno in range(2, len(lines) + 1):
        text = lines[lineno - 1].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if size is None:
            try:
                size = tuple(int(t) for t in parts)
            except ValueError:
                raise MatrixMarketError(path, lineno, "bad size line") from None
            if len(size) != 3 or min(size) < 0:
                raise MatrixMarketError(path, lineno, "size line needs rows cols nnz")
            continue
        if len(parts) != 3:
            raise MatrixMarketError(path, lineno, "entry needs row col value")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(path, lineno, "unparsable entry") from None
        if not (1 <= i <= size[0] and 1 <= j <= size[1]):
            raise MatrixMarketError(path, lineno, f"index ({i}, {j}) out of range")
        if sym == "symmetric" and j > i:
            raise MatrixMarketError(path, lineno, "symmetric storage must use the lower triangle")
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
    if size is None:
        raise MatrixMarketError(path, lineno, "missing size line")
    if len(vals) != size[2]:
        raise MatrixMarketError(path, lineno, f"expected {size[2]} entries, found {len(vals)}")
    r = np.array(rows, dtype=np.int64)
    c = np.array(cols, dtype=np.int64)
    v = np.array(vals, dtype=float)
    if sym == "symmetric":
        off = r != c
        r, c, v = np.concatenate([r, c[off]]), np.concatenate([c, r[off]]), np.concatenate([v, v[off]])
    mat = sp.coo_matrix((v, (r, c)), shape=size[:2])
    mat.sum_duplicates()
    return LinearOperator.from_matrix(mat)


def save_matrix_market(op, path, symmetric: bool = False) -> None:
    """Write ``op`` (LinearOperator, sparse or dense matrix) with 17 significant digits."""
    if isinstance(op, LinearOperator):
        if not op.is_explicit:
            raise ValueError("only explicit operators can be saved")
        mat = op.coo if op.coo is not None else sp.coo_matrix(op.toarray())
    else:
        mat = sp.coo_matrix(op)
    mat = sp.coo_matrix(mat)
    mat.sum_duplicates()
    r, c, v = mat.row, mat.col, mat.data
    if symmetric:
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("symmetric storage needs a square matrix")
        keep = r >= c
        r, c, v = r[keep], c[keep], v[keep]
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {'symmetric' if symmetric else 'general'}\n")
        fh.write(f"{mat.shape[0]} {mat.shape[1]} {v.size}\n")
        for i, j, x in zip(r.tolist(), c.tolist(), v.tolist()):
            fh.write(f"{i + 1} {j + 1} {x:.17g}\n")


def load_vector(path) -> np.ndarray:
    """One decimal value per line; blank lines and ``#``/``%`` comments are skipped."""
    vals = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text[0] in "#%":
                continue
            try:
                vals.append(float(text))
            except ValueError:
                raise MatrixMarketError(path, lineno, f"not a number: {text!r}") from None
    return np.array(vals, dtype=float)


def save_vector(v, path) -> None:
    with open(path, "w") as fh:
        for x in np.asarray(v, dtype=float).ravel().tolist():
            fh.write(f"{x:.17g}\n")
