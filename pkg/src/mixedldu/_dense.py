"""Small dense kernels shared by the Krylov and Schur code.

Everything here is written against the common surface of ``np.ndarray`` and
:class:`~mixedldu.precision.DDArray`, so the same routine runs in double or
double-double.  Sizes are tiny (block widths, postponed sets), so plain
Python loops over the elimination steps are fine.
"""
from __future__ import annotations

import numpy as np

from .precision import DDArray, to_float64


def mag(x) -> np.ndarray:
    """Magnitudes as float64, for pivot searches."""
    return np.abs(to_float64(x))


def eye_like(x, n):
    if isinstance(x, DDArray):
        return DDArray(np.eye(n))
    return np.eye(n, dtype=np.asarray(x).dtype)


class CompleteLU:
    """``P A Q = L U`` with complete pivoting; singular trailing pivots are flagged.

    ``rank`` counts pivots above ``drop_tol * max|A|``; :meth:`solve` solves on
    the leading ``rank`` pivots and sets the remaining unknowns to zero.
    """

    def __init__(self, A, drop_tol: float = 0.0):
        n = A.shape[0]
        W = A.copy()
        self.n = n
        rows = np.arange(n)
        cols = np.arange(n)
        scale = float(mag(A).max()) if n else 0.0
        self.rank = 0
        for k in range(n):
            sub = mag(W[k:, k:])
            i, j = np.unravel_index(np.argmax(sub), sub.shape)
            piv = sub[i, j]
            if piv == 0 or piv <= drop_tol * scale:
                break
            i += k
            j += k
            if i != k:
                W[[k, i]] = W[[i, k]]
                rows[[k, i]] = rows[[i, k]]
            if j != k:
                W[:, [k, j]] = W[:, [j, k]]
                cols[[k, j]] = cols[[j, k]]
            if k + 1 < n:
                lcol = W[k + 1:, k] / W[k, k]
                W[k + 1:, k] = lcol
                W[k + 1:, k + 1:] = W[k + 1:, k + 1:] - lcol.reshape(-1, 1) * W[k, k + 1:].reshape(1, -1)
            self.rank = k + 1
        self.W = W
        self.rows = rows
        self.cols = cols

    def solve(self, B):
        vec = B.ndim == 1
        if vec:
            B = B.reshape(-1, 1)
        r = self.rank
        Y = B[self.rows]
        Y = Y.copy()
        for k in range(r):
            if k + 1 < self.n:
                Y[k + 1:] = Y[k + 1:] - self.W[k + 1:, k].reshape(-1, 1) * Y[k].reshape(1, -1)
        for k in range(r - 1, -1, -1):
            acc = Y[k]
            if k + 1 < r:
                acc = acc - self.W[k, k + 1:r] @ Y[k + 1:r]
            Y[k] = acc / self.W[k, k]
        if r < self.n:
            Y[r:] = Y[r:] * 0.0
        X = Y.copy()
        X[self.cols] = Y
        return X[:, 0] if vec else X


def pivoted_gram_select(G, drop_tol: float):
    """Columns to keep from a Gram matrix, by diagonally pivoted Cholesky.

    A column is dropped when its remaining (orthogonalized) squared length
    falls below ``drop_tol * max diag(G)``.
    """
    n = G.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    W = G.copy()
    scale = float(mag(G).max())
    remaining = list(range(n))
    keep = []
    while remaining:
        diag = np.array([float(to_float64(W[i, i])) for i in remaining])
        t = int(np.argmax(diag))
        if diag[t] <= drop_tol * scale or diag[t] <= 0:
            break
        p = remaining.pop(t)
        keep.append(p)
        if remaining:
            idx = np.array(remaining)
            col = W[idx, p] / W[p, p]
            W[np.ix_(idx, idx)] = W[np.ix_(idx, idx)] - col.reshape(-1, 1) * W[p, idx].reshape(1, -1)
    return np.sort(np.array(keep, dtype=np.int64))
