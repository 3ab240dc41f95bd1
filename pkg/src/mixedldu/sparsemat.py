"""Compressed sparse row storage, Matrix Market I/O, scaling and SpMV/SpMM.

Values live in the higher precision only: ``float64`` arrays, or a
:class:`~mixedldu.precision.DDArray` when double-double is the higher kind.
Pattern manipulation (permutation, slicing) is delegated to ``scipy.sparse``;
double-double values ride along through a position index so the pattern code
stays shared.
"""
from __future__ import annotations

import enum
import io
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .precision import DDArray, ScalarKind, asarray, truncate

__all__ = [
    "Symmetry",
    "SparseMatrix",
    "DiagonalScaling",
    "BlockView",
    "MatrixMarketError",
    "read_matrix_market",
    "write_matrix_market",
    "scale_symmetric",
    "spmv",
    "spmm",
    "extract_blocks",
    "DENSE_BLOCK_THRESHOLD",
]

DENSE_BLOCK_THRESHOLD = 512


class Symmetry(enum.Enum):
    GENERAL = "general"
    SYMMETRIC = "symmetric"


class MatrixMarketError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """CSR matrix with full (mirrored) storage of symmetric inputs."""

    nrows: int
    ncols: int
    row_starts: np.ndarray
    col_indices: np.ndarray
    values: object  # np.ndarray[float64] or DDArray
    symmetry: Symmetry = Symmetry.GENERAL

    # -- construction -----------------------------------------------------
    @classmethod
    def from_scipy(cls, a, symmetry=Symmetry.GENERAL, values=None) -> "SparseMatrix":
        a = sp.csr_matrix(a, dtype=np.float64)
        a.sum_duplicates()
        a.sort_indices()
        vals = a.data.copy() if values is None else values
        return cls(a.shape[0], a.shape[1], a.indptr.astype(np.int64),
                   a.indices.astype(np.int64), vals, symmetry)

    @classmethod
    def from_dense(cls, a, symmetry=Symmetry.GENERAL) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)), symmetry)

    # -- views ------------------------------------------------------------
    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.row_starts[-1])

    @property
    def kind(self) -> ScalarKind:
        return ScalarKind.DOUBLEDOUBLE if isinstance(self.values, DDArray) else ScalarKind.DOUBLE

    def _csr(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.col_indices, self.row_starts), shape=self.shape)

    def to_scipy(self, kind: ScalarKind = ScalarKind.DOUBLE) -> sp.csr_matrix:
        """CSR copy with values rounded to ``kind`` (single or double)."""
        if kind is ScalarKind.DOUBLEDOUBLE:
            raise ValueError("scipy storage holds single or double only")
        return self._csr(truncate(self.values, kind) if kind is ScalarKind.SINGLE
                         or isinstance(self.values, DDArray) else self.values.copy())

    def pattern(self) -> sp.csr_matrix:
        return self._csr(np.ones(self.nnz))

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def diagonal(self):
        rows = np.repeat(np.arange(self.nrows), np.diff(self.row_starts))
        pos = np.nonzero(rows == self.col_indices)[0]
        out_idx = rows[pos]
        if isinstance(self.values, DDArray):
            d = DDArray(np.zeros(min(self.shape)))
            d[out_idx] = self.values[pos]
            return d
        d = np.zeros(min(self.shape))
        d[out_idx] = self.values[pos]
        return d

    def submatrix(self, rows, cols) -> "SparseMatrix":
        """Rows ``rows`` and columns ``cols`` (index arrays), pattern and values."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        # carry positions (1-based so explicit zeros survive) instead of values
        tagged = self._csr(np.arange(1, self.nnz + 1, dtype=np.float64))
        sub = tagged[rows][:, cols].tocsr()
        sub.sort_indices()
        pos = sub.data.astype(np.int64) - 1
        if isinstance(self.values, DDArray):
            vals = self.values[pos]
        else:
            vals = self.values[pos]
        return SparseMatrix(sub.shape[0], sub.shape[1], sub.indptr.astype(np.int64),
                            sub.indices.astype(np.int64), vals, Symmetry.GENERAL)

    def dense_block(self, rows, cols):
        """Dense higher-precision copy of a sub-block."""
        sub = self.submatrix(rows, cols)
        if isinstance(sub.values, DDArray):
            hi = sub._csr(sub.values.hi).toarray()
            lo = sub._csr(sub.values.lo).toarray()
            return DDArray(hi, lo)
        return sub.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        tagged = self._csr(np.arange(1, self.nnz + 1, dtype=np.float64)).T.tocsr()
        tagged.sort_indices()
        pos = tagged.data.astype(np.int64) - 1
        return SparseMatrix(self.ncols, self.nrows, tagged.indptr.astype(np.int64),
                            tagged.indices.astype(np.int64), self.values[pos], self.symmetry)

    def __matmul__(self, x):
        x_is_vec = getattr(x, "ndim", 1) == 1
        return spmv(self, x) if x_is_vec else spmm(self, x)


@dataclass(frozen=True, eq=False)
class DiagonalScaling:
    """``K = Q Kbar Q`` with ``Q = diag(q)``."""

    q: object  # float64 ndarray or DDArray

    def apply(self, x):
        """``Q x`` (rows of ``x``)."""
        q = self.q if getattr(x, "ndim", 1) == 1 else self.q.reshape(-1, 1)
        return x * q


@dataclass(frozen=True, eq=False)
class BlockView:
    K11: SparseMatrix
    K12: object
    K21: object
    K22: object
    n1: int
    n2: int
    perm: np.ndarray


# ---------------------------------------------------------------------------
# Matrix Market
# ---------------------------------------------------------------------------

def read_matrix_market(source) -> SparseMatrix:
    """Read a real coordinate Matrix Market file (path, bytes or text stream).

    Symmetric files are expanded to full storage and duplicate coordinates are
    summed.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return read_matrix_market(fh)
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    raw = source.read()
    text = raw.decode("ascii") if isinstance(raw, bytes) else raw
    lines = text.splitlines()
    if not lines:
        raise MatrixMarketError("empty input", 1)

    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("missing %%MatrixMarket header", 1)
    obj, fmt, field, symm = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported format {obj} {fmt}", 1)
    if field not in ("real", "integer"):
        raise MatrixMarketError(f"unsupported field {field!r}; real values required", 1)
    if symm not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {symm!r}", 1)

    i = 1
    while i < len(lines) and (not lines[i].strip() or lines[i].lstrip().startswith("%")):
        i += 1
    if i == len(lines):
        raise MatrixMarketError("missing size line", i + 1)
    try:
        nrows, ncols, nnz = (int(t) for t in lines[i].split())
    except ValueError:
        raise MatrixMarketError("malformed size line", i + 1) from None
    size_line = i

    body = [(k + 1, ln) for k, ln in enumerate(lines[size_line + 1:], start=size_line + 1)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if len(body) != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {len(body)}",
                                body[-1][0] if body else size_line + 1)
    try:
        data = np.array(" ".join(ln for _, ln in body).split(), dtype=np.float64)
        ok = data.size == 3 * nnz
    except ValueError:
        ok = False
    if not ok:
        for lineno, ln in body:
            parts = ln.split()
            try:
                if len(parts) != 3:
                    raise ValueError
                int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise MatrixMarketError(f"malformed entry {ln.strip()!r}", lineno) from None
    data = data.reshape(nnz, 3)
    rows = data[:, 0].astype(np.int64) - 1
    cols = data[:, 1].astype(np.int64) - 1
    vals = data[:, 2]
    bad = (rows < 0) | (rows >= nrows) | (cols < 0) | (cols >= ncols)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise MatrixMarketError(f"index ({rows[k] + 1}, {cols[k] + 1}) out of bounds", body[k][0])

    symmetry = Symmetry.GENERAL
    if symm == "symmetric":
        symmetry = Symmetry.SYMMETRIC
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    return SparseMatrix.from_scipy(coo.tocsr(), symmetry)


def write_matrix_market(path, a: SparseMatrix, symmetric: bool = False):
    """Write ``a`` in coordinate format (double values; 17 significant digits)."""
    m = a.to_scipy().tocoo()
    rows, cols, vals = m.row, m.col, m.data
    if symmetric:
        keep = rows >= cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {'symmetric' if symmetric else 'general'}\n")
        fh.write(f"{a.nrows} {a.ncols} {len(vals)}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")


# ---------------------------------------------------------------------------
# scaling and products
# ---------------------------------------------------------------------------

def scale_symmetric(kbar: SparseMatrix, kind: ScalarKind = ScalarKind.DOUBLE):
    """Return ``(K, Q)`` with ``K = Q Kbar Q`` and unit-magnitude nonzero diagonal.

    ``q_i = 1/sqrt(|Kbar_ii|)`` where the diagonal is nonzero, else 1.  With
    ``kind=DOUBLEDOUBLE`` both ``q`` and the scaled values are double-double.
    """
    if kbar.nrows != kbar.ncols:
        raise ValueError("scaling needs a square matrix")
    rows = np.repeat(np.arange(kbar.nrows), np.diff(kbar.row_starts))
    cols = kbar.col_indices
    diag = kbar.diagonal()
    if kind is ScalarKind.DOUBLEDOUBLE:
        d = asarray(diag, kind)
        mag = abs(d)
        nz = mag.hi != 0
        q = DDArray(np.ones(kbar.nrows))
        if np.any(nz):
            q[nz] = DDArray(1.0) / mag[nz].sqrt()
        vals = asarray(kbar.values, kind) * q[rows] * q[cols]
        # diagonal entries are +-1 by construction; pin them exactly
        on_diag = np.nonzero((rows == cols) & nz[rows])[0]
        vals[on_diag] = DDArray(np.sign(d.hi[rows[on_diag]]))
    else:
        d = np.asarray(diag, dtype=np.float64)
        nz = d != 0
        q = np.ones(kbar.nrows)
        q[nz] = 1.0 / np.sqrt(np.abs(d[nz]))
        vals = np.asarray(kbar.values, dtype=np.float64) * q[rows] * q[cols]
        on_diag = (rows == cols) & nz[rows]
        vals[on_diag] = np.sign(d[rows[on_diag]])
    k = SparseMatrix(kbar.nrows, kbar.ncols, kbar.row_starts, kbar.col_indices, vals, kbar.symmetry)
    return k, DiagonalScaling(q)


def _dd_rowsum(a: SparseMatrix, prod: DDArray, tail_shape) -> DDArray:
    # deterministic per-row accumulation: position p of every row in one sweep
    lens = np.diff(a.row_starts)
    out = DDArray(np.zeros((a.nrows,) + tail_shape))
    if a.nnz == 0:
        return out
    for p in range(int(lens.max())):
        rows = np.nonzero(lens > p)[0]
        out[rows] = out[rows] + prod[a.row_starts[rows] + p]
    return out


def spmv(a: SparseMatrix, x):
    """``y = A x`` accumulated in the higher precision of ``A`` and ``x``."""
    shape = getattr(x, "shape", None) or np.shape(x)
    if len(shape) != 1 or shape[0] != a.ncols:
        raise ValueError(f"spmv dimension mismatch: {a.shape} and {shape}")
    if isinstance(a.values, DDArray) or isinstance(x, DDArray):
        vals = asarray(a.values, ScalarKind.DOUBLEDOUBLE)
        xd = asarray(x, ScalarKind.DOUBLEDOUBLE)
        return _dd_rowsum(a, vals * xd[a.col_indices], ())
    return a._csr(a.values) @ np.asarray(x, dtype=np.float64)


def spmm(a: SparseMatrix, x):
    """``Y = A X`` for a dense block ``X``; one traversal of ``A`` per call."""
    shape = getattr(x, "shape", None) or np.shape(x)
    if len(shape) != 2 or shape[0] != a.ncols:
        raise ValueError(f"spmm dimension mismatch: {a.shape} and {shape}")
    if isinstance(a.values, DDArray) or isinstance(x, DDArray):
        vals = asarray(a.values, ScalarKind.DOUBLEDOUBLE)
        xd = asarray(x, ScalarKind.DOUBLEDOUBLE)
        prod = vals.reshape(-1, 1) * xd[a.col_indices]
        return _dd_rowsum(a, prod, (shape[1],))
    return np.asarray(a._csr(a.values) @ np.asarray(x, dtype=np.float64))


def _perm_array(perm, n):
    fwd = np.asarray(getattr(perm, "forward", perm), dtype=np.int64)
    if fwd.shape != (n,) or not np.array_equal(np.sort(fwd), np.arange(n)):
        raise ValueError("invalid permutation")
    return fwd


def extract_blocks(k: SparseMatrix, perm, n1: int,
                   dense_threshold: int = DENSE_BLOCK_THRESHOLD) -> BlockView:
    """Split ``P^T K P`` after row/column ``n1``.

    ``perm[j]`` is the original index placed at position ``j``.  Off-diagonal
    and trailing blocks are dense when the trailing size is at most
    ``dense_threshold``.
    """
    fwd = _perm_array(perm, k.nrows)
    if not 0 < n1 <= k.nrows:
        raise ValueError(f"n1={n1} outside (0, {k.nrows}]")
    i1, i2 = fwd[:n1], fwd[n1:]
    n2 = len(i2)
    k11 = k.submatrix(i1, i1)
    if n2 <= dense_threshold:
        k12 = k.dense_block(i1, i2)
        k21 = k.dense_block(i2, i1)
        k22 = k.dense_block(i2, i2)
    else:
        k12, k21, k22 = k.submatrix(i1, i2), k.submatrix(i2, i1), k.submatrix(i2, i2)
    return BlockView(k11, k12, k21, k22, n1, n2, fwd)
