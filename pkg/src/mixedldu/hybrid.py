"""Hybrid factorization: lower-precision LDU plus a higher-precision Schur complement.

The matrix is scaled, ordered by nested dissection and factorized in the lower
precision with threshold postponing.  The factorized part ``K11`` is then used
only as a preconditioner: the coupling ``X12 = K11^{-1} K12`` is computed by a
Krylov solver in the higher precision, the Schur complement
``S22 = K22 - K21 X12`` is formed and factorized densely in the higher
precision with 1x1/2x2 symmetric pivots, and its kernel is detected from a gap
in the pivot magnitudes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._dense import CompleteLU, mag
from .krylov import ConvergenceHistory, SolveResult, SolverConfig, solve
from .lowfactor import LowerFactor, PostponedPartition, factor_with_postponing, precond_solve
from .ordering import BisectionTree, build_bisection_tree
from .precision import (DDArray, PrecisionPair, ScalarKind, asarray, is_dd, norm,
                        to_float64, zeros)
from .sparsemat import DiagonalScaling, SparseMatrix, scale_symmetric, spmm, spmv

__all__ = [
    "SchurFactor",
    "HybridFactorization",
    "InnerSolverError",
    "factor_schur",
    "hybrid_factor",
    "direct_factor",
    "hybrid_solve",
    "kernel_dimension",
]

BK_ALPHA = (1.0 + math.sqrt(17.0)) / 8.0
DIRECT_DD_LIMIT = 3000  # largest K11 factorized densely in double-double


class InnerSolverError(RuntimeError):
    """The Krylov solver inside the factorization or solve did not converge."""

    def __init__(self, message, history: ConvergenceHistory):
        super().__init__(message)
        self.history = history


# ---------------------------------------------------------------------------
# dense Schur factorization with kernel detection
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SchurFactor:
    """``P S P^T = L D U`` with ``D`` made of 1x1 and 2x2 blocks.

    ``perm[k]`` is the row/column of ``S`` placed at position ``k``.  The
    factors live in ``W`` (strict lower part ``L``, block diagonal ``D``,
    strict upper part ``U``).  Blocks at positions ``rank`` and beyond span the
    detected kernel.
    """

    S22: object
    W: object
    perm: np.ndarray
    blocks: list  # (start, size) in elimination order
    magnitudes: list  # (largest, smallest) singular value of each diagonal block
    rank: int
    kernel_basis: object  # M x kernel_dim, in the storage of S22
    tol_ratio: float = 0.0  # relative size below which a pivot counts as zero

    @property
    def M(self) -> int:
        return len(self.perm)

    @property
    def kernel_dim(self) -> int:
        return self.M - self.rank

    @property
    def pivots(self):
        return [tuple(int(i) for i in self.perm[s:s + k]) for s, k in self.blocks]

    def solve(self, y, return_inconsistency: bool = False):
        """Solve ``S22 x = y`` on the image of ``S22``.

        The part of ``y`` outside the image (after forward elimination) is
        dropped and its relative size returned when asked; the returned ``x``
        has no component along the kernel basis.
        """
        vec = y.ndim == 1
        w = (y.reshape(-1, 1) if vec else y)[self.perm].copy()
        r = self.rank
        W = self.W
        rank_blocks = [(s, k) for s, k in self.blocks if s < r]
        for s, k in rank_blocks:
            if s + k < self.M:
                w[s + k:] = w[s + k:] - W[s + k:, s:s + k] @ w[s:s + k]
        ynorm = np.atleast_1d(norm(y.reshape(-1, 1) if vec else y))
        tail = np.atleast_1d(norm(w[r:])) if r < self.M else np.zeros_like(ynorm)
        incons = float(np.max(np.where(ynorm > 0, tail / np.where(ynorm > 0, ynorm, 1), 0)))
        if r < self.M:
            w[r:] = w[r:] * 0.0
        for s, k in rank_blocks:
            w[s:s + k] = _solve_small(W[s:s + k, s:s + k], w[s:s + k])
        for s, k in reversed(rank_blocks):
            if s + k < r:
                w[s:s + k] = w[s:s + k] - W[s:s + k, s + k:r] @ w[s + k:r]
        x = w.copy()
        x[self.perm] = w
        if self.kernel_dim and r > 0:
            V = self.kernel_basis
            G = V.T @ V
            x = x - V @ CompleteLU(G).solve(V.T @ x)
        x = x[:, 0] if vec else x
        return (x, incons) if return_inconsistency else x


def _solve_small(P, b):
    """Solve with a 1x1 or 2x2 pivot block by the explicit inverse."""
    if P.shape[0] == 1:
        return b / P[0, 0]
    a, bb, c, d = P[0, 0], P[0, 1], P[1, 0], P[1, 1]
    det = a * d - bb * c
    x0 = (d * b[0] - bb * b[1]) / det
    x1 = (a * b[1] - c * b[0]) / det
    out = b.copy()
    out[0] = x0
    out[1] = x1
    return out


def _inverse_small(P):
    if P.shape[0] == 1:
        return 1.0 / P
    a, b, c, d = P[0, 0], P[0, 1], P[1, 0], P[1, 1]
    det = a * d - b * c
    inv = P.copy()
    inv[0, 0] = d / det
    inv[0, 1] = -b / det
    inv[1, 0] = -c / det
    inv[1, 1] = a / det
    return inv


def _swap(A, perm, i, j):
    if i == j:
        return
    A[[i, j]] = A[[j, i]]
    A[:, [i, j]] = A[:, [j, i]]
    perm[[i, j]] = perm[[j, i]]


def _kernel_split(magnitudes, ratio):
    """Index of the first kernel block, or ``len(magnitudes)`` if there is no gap."""
    nb = len(magnitudes)
    best, where = np.inf, nb
    for k in range(1, nb):
        head = min(lo for _, lo in magnitudes[:k])
        tail = max(hi for hi, _ in magnitudes[k:])
        g = tail / head if head > 0 else np.inf
        if g < best:
            best, where = g, k
    return where if best < ratio else nb


def factor_schur(S22, kernel_tol_ratio: float | None = None, kind: ScalarKind | None = None
                 ) -> SchurFactor:
    """Symmetric 1x1/2x2 pivoted factorization of ``S22`` with kernel detection.

    At each step the largest remaining diagonal entry is the 1x1 candidate; it
    is accepted when it is at least ``BK_ALPHA`` times the largest entry coupled
    to it, otherwise it is paired with that entry's index as a 2x2 pivot.
    Exactly zero trailing blocks end the elimination.  The kernel starts at the
    block boundary where the largest later pivot magnitude falls below
    ``kernel_tol_ratio`` times the smallest earlier one (default
    ``1e6 * eps``).
    """
    if kind is None:
        kind = ScalarKind.DOUBLEDOUBLE if is_dd(S22) else (
            ScalarKind.SINGLE if np.asarray(S22).dtype == np.float32 else ScalarKind.DOUBLE)
    if kernel_tol_ratio is None:
        kernel_tol_ratio = 1e6 * kind.eps
    M = S22.shape[0]
    if S22.shape != (M, M):
        raise ValueError("S22 must be square")
    A = S22.copy()
    perm = np.arange(M)
    blocks, mags = [], []
    k = 0
    while k < M:
        sub = mag(A[k:, k:])
        if sub.max() == 0:
            break
        diag = np.diag(sub)
        r = int(np.argmax(diag))
        off = np.maximum(sub[:, r], sub[r, :])
        off[r] = 0.0
        lam = off.max()
        if diag[r] > 0 and diag[r] >= BK_ALPHA * lam:
            size = 1
            _swap(A, perm, k, k + r)
        else:
            s = int(np.argmax(off))
            size = 2
            a, b = sorted((r, s))
            _swap(A, perm, k, k + a)
            _swap(A, perm, k + 1, k + b)
        P = A[k:k + size, k:k + size]
        sv = np.linalg.svd(to_float64(P), compute_uv=False)
        if sv[-1] == 0:
            break
        blocks.append((k, size))
        mags.append((float(sv[0]), float(sv[-1])))
        e = k + size
        if e < M:
            Pinv = _inverse_small(P)
            Lb = A[e:, k:e] @ Pinv
            Ub = Pinv @ A[k:e, e:]
            A[e:, e:] = A[e:, e:] - A[e:, k:e] @ Ub
            A[e:, k:e] = Lb
            A[k:e, e:] = Ub
        k = e
    split = _kernel_split(mags, kernel_tol_ratio)
    rank = blocks[split][0] if split < len(blocks) else k
    nb_rank = split
    blocks_rank = blocks[:nb_rank]

    # kernel basis: U11 w1 = -U12 with w2 = I
    kd = M - rank
    if kd:
        Wk = _kernel_vectors(A, blocks_rank, rank, M)
        V = Wk.copy()
        V[perm] = Wk
    else:
        V = zeros((M, 0), kind) if kind is ScalarKind.DOUBLEDOUBLE else np.zeros((M, 0), dtype=kind.dtype)
    return SchurFactor(S22, A, perm, blocks, mags, rank, V, kernel_tol_ratio)


def _kernel_vectors(W, rank_blocks, r, M):
    kd = M - r
    if is_dd(W):
        X = DDArray(np.zeros((M, kd)))
        X[r:] = DDArray(np.eye(kd))
    else:
        X = np.zeros((M, kd), dtype=W.dtype)
        X[r:] = np.eye(kd, dtype=W.dtype)
    for s, k in reversed(rank_blocks):
        X[s:s + k] = X[s:s + k] * 0.0 - W[s:s + k, s + k:] @ X[s + k:]
    # normalize columns for a well-scaled basis
    nrm = np.atleast_1d(norm(X))
    return X * (1.0 / nrm).reshape(1, -1)


# ---------------------------------------------------------------------------
# hybrid factorization
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class HybridFactorization:
    """Everything needed to solve with the scaled, permuted matrix.

    ``pair`` is ``None`` for a pure-precision (direct) factorization; then
    ``working`` is the single precision every step ran in.
    """

    n: int
    scaling: DiagonalScaling
    tree: BisectionTree
    partition: PostponedPartition
    lower: LowerFactor
    K11: object
    K21: object
    X12: object
    schur: SchurFactor
    pair: PrecisionPair | None
    working: ScalarKind
    cfg: SolverConfig
    history: ConvergenceHistory | None = None
    times: dict = field(default_factory=dict)
    _direct11: object = None  # dense LU of K11 for a pure double-double run

    @property
    def M(self) -> int:
        return self.partition.M

    @property
    def N(self) -> int:
        return self.partition.N

    @property
    def kernel_dim(self) -> int:
        return self.schur.kernel_dim

    @property
    def mixed(self) -> bool:
        return self.pair is not None


def _block(K: SparseMatrix, rows, cols, kind: ScalarKind):
    """Sub-block in the storage used for ``kind`` arithmetic."""
    sub = K.submatrix(rows, cols)
    if kind is ScalarKind.DOUBLEDOUBLE:
        return sub
    return sub.to_scipy(kind) if kind is ScalarKind.SINGLE else sub


def _mul(A, X):
    if isinstance(A, SparseMatrix):
        return spmv(A, X) if X.ndim == 1 else spmm(A, X)
    return np.asarray(A @ X)


def _dense(A, kind: ScalarKind):
    if isinstance(A, SparseMatrix):
        if kind is ScalarKind.DOUBLEDOUBLE:
            return A.dense_block(np.arange(A.nrows), np.arange(A.ncols))
        return A.toarray()
    return A.toarray()


def _prepare(Kbar, kind, lower, tau, m, n_extra, force_postpone):
    t0 = time.perf_counter()
    K, scaling = scale_symmetric(Kbar, ScalarKind.DOUBLEDOUBLE if kind is ScalarKind.DOUBLEDOUBLE
                                 else ScalarKind.DOUBLE)
    _, tree = build_bisection_tree(K, m)
    F, part = factor_with_postponing(K, tree, tau, n_extra, lower, force_postpone)
    times = {"lower": time.perf_counter() - t0}
    l1, l2 = part.moderate, part.lambda2
    K11 = _block(K, l1, l1, kind)
    K12 = _block(K, l1, l2, kind)
    K21 = _block(K, l2, l1, kind)
    K22 = _block(K, l2, l2, kind)
    return K, scaling, tree, F, part, K11, K12, K21, K22, times


def hybrid_factor(Kbar: SparseMatrix, tau: float = 0.05,
                  pair: PrecisionPair = PrecisionPair.SINGLE_DOUBLE,
                  cfg: SolverConfig | None = None, m: int | None = None, n_extra: int = 4,
                  force_postpone=None, kernel_tol_ratio: float | None = None
                  ) -> HybridFactorization:
    """Mixed-precision factorization of ``Kbar``.

    Scale, order, factor in ``pair.lower`` with postponing, solve
    ``K11 X12 = K12`` with the Krylov method of ``cfg`` preconditioned by the
    lower factor, form ``S22 = K22 - K21 X12`` in ``pair.higher`` and factor it
    with kernel detection.  Raises :class:`InnerSolverError` if the Krylov
    solve does not reach its tolerance.
    """
    cfg = cfg or SolverConfig()
    hi = pair.higher
    K, scaling, tree, F, part, K11, K12, K21, K22, times = _prepare(
        Kbar, hi, pair.lower, tau, m, n_extra, force_postpone)
    t0 = time.perf_counter()
    hist = None
    if part.M and part.N:
        K12d = _dense(K12, hi)
        res = solve(K11, F, K12d, cfg)
        hist = res.history
        if not res.converged:
            raise InnerSolverError(
                f"inner {cfg.method.value} solve for X12 stopped at {hist.status}", hist)
        X12 = res.x
        S22 = _dense(K22, hi) - _mul(K21, X12)
    else:
        X12 = zeros((part.N, part.M), hi)
        S22 = _dense(K22, hi) if part.M else zeros((0, 0), hi)
    times["schur"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    schur = factor_schur(S22, kernel_tol_ratio, hi)
    times["schur_factor"] = time.perf_counter() - t0
    return HybridFactorization(K.nrows, scaling, tree, part, F, K11, K21, X12, schur,
                               pair, hi, cfg, hist, times)


def direct_factor(Kbar: SparseMatrix, kind: ScalarKind, tau: float = 0.05,
                  m: int | None = None, n_extra: int = 4, force_postpone=None,
                  kernel_tol_ratio: float | None = None) -> HybridFactorization:
    """Pure-precision baseline: the same pipeline with direct inner solves in ``kind``.

    For single and double the postponing factorization itself is the ``K11``
    solver.  Double-double has no sparse factorization, so the postponed set is
    chosen by a double factorization and ``K11`` is factorized densely in
    double-double (at most ``DIRECT_DD_LIMIT`` rows).
    """
    kind = ScalarKind.parse(kind) if isinstance(kind, str) else kind
    lower = ScalarKind.DOUBLE if kind is ScalarKind.DOUBLEDOUBLE else kind
    K, scaling, tree, F, part, K11, K12, K21, K22, times = _prepare(
        Kbar, kind, lower, tau, m, n_extra, force_postpone)
    t0 = time.perf_counter()
    lu = None
    if kind is ScalarKind.DOUBLEDOUBLE:
        if part.N > DIRECT_DD_LIMIT:
            raise ValueError(f"pure double-double needs K11 of at most {DIRECT_DD_LIMIT} rows")
        lu = CompleteLU(_dense(K11, kind)) if part.N else None
    fact = HybridFactorization(K.nrows, scaling, tree, part, F, K11, K21, None, None,
                               None, kind, SolverConfig(), None, times, lu)
    if part.M and part.N:
        X12 = _direct_solve(fact, _dense(K12, kind))
        S22 = _dense(K22, kind) - _mul(K21, X12)
    else:
        X12 = zeros((part.N, part.M), kind)
        S22 = _dense(K22, kind) if part.M else zeros((0, 0), kind)
    fact.X12 = X12
    times["schur"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    fact.schur = factor_schur(S22, kernel_tol_ratio, kind)
    times["schur_factor"] = time.perf_counter() - t0
    return fact


def _direct_solve(F: HybridFactorization, B):
    if F._direct11 is not None:
        return F._direct11.solve(B)
    out = precond_solve(F.lower, B, F.working)
    return out.astype(F.working.dtype) if not is_dd(out) else out


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def hybrid_solve(F: HybridFactorization, b, cfg: SolverConfig | None = None) -> SolveResult:
    """Solve ``Kbar x = b`` (one or several columns) with a hybrid factorization.

    ``y1`` solves ``K11 y1 = b1`` (Krylov in the mixed case, direct in a pure
    run), ``y2 = b2 - K21 y1``, ``S22 x2 = y2`` on the image of ``S22``, and
    ``x1 = y1 - X12 x2``.  The result carries ``inconsistency``, the relative
    part of ``y2`` outside the image, and ``inconsistent`` when that exceeds
    the solver tolerance.
    """
    cfg = cfg or F.cfg
    kind = F.working
    b = asarray(b, kind)
    if b.shape[0] != F.n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix has {F.n}")
    q = F.scaling.q
    bs = b * (q if b.ndim == 1 else q.reshape(-1, 1))
    if kind is ScalarKind.SINGLE:
        bs = bs.astype(np.float32)
    l1, l2 = F.partition.moderate, F.partition.lambda2
    hist = ConvergenceHistory(cfg.method.value if F.mixed else "direct")
    y1 = bs[l1]
    if F.N:
        if F.mixed:
            res = solve(F.K11, F.lower, y1, cfg)
            hist = res.history
            if not res.converged:
                raise InnerSolverError(f"inner solve stopped at {hist.status}", hist)
            y1 = res.x
        else:
            y1 = _direct_solve(F, y1)
            hist.converged = np.array([True])
            hist.iterations = np.array([0])
            hist.status = "converged"
    else:
        hist.converged = np.array([True])
        hist.iterations = np.array([0])
        hist.status = "converged"
    incons = 0.0
    y = bs.copy()
    if F.M:
        y2 = bs[l2]
        if F.N:
            y2 = y2 - _mul(F.K21, y1)
        x2, incons = F.schur.solve(y2, return_inconsistency=True)
        x1 = y1 - F.X12 @ x2 if F.N else y1
        y[l2] = x2
    else:
        x1 = y1
    if F.N:
        y[l1] = x1
    x = y * (q if y.ndim == 1 else q.reshape(-1, 1))
    # S22 carries the inner-solver error, so the test uses the kernel threshold too
    tol = max(cfg.tolerance(kind), F.schur.tol_ratio)
    out = SolveResult(x, hist)
    out.inconsistency = incons
    out.inconsistent = incons > tol
    return out


def kernel_dimension(F: HybridFactorization) -> int:
    return F.schur.kernel_dim
