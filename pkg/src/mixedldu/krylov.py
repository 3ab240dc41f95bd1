"""Mixed-precision inner solvers: iterative refinement, GCR and block GCR.

All three are right-preconditioned by a lower-precision factorization: a
preconditioner application truncates its input to the lower precision, solves
there, and lifts the result back.  Residuals, inner products and updates stay
in the higher precision (double, or double-double via ``DDArray``).
"""
from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass, field

import numpy as np

from ._dense import CompleteLU, pivoted_gram_select
from .lowfactor import LowerFactor, precond_solve
from .precision import DDArray, ScalarKind, asarray, is_dd, kind_of, norm
from .sparsemat import SparseMatrix, spmm, spmv

__all__ = [
    "Method",
    "SolverConfig",
    "ConvergenceHistory",
    "SolveResult",
    "iterative_refinement",
    "gcr",
    "block_gcr",
    "solve",
    "as_operator",
    "as_preconditioner",
]


class Method(enum.Enum):
    IR = "ir"
    GCR = "gcr"
    BLOCK_GCR = "bgcr"

    @classmethod
    def parse(cls, label) -> "Method":
        if isinstance(label, Method):
            return label
        return cls(label.lower())


@dataclass(frozen=True)
class SolverConfig:
    """``tol=None`` means ``50 * eps`` of the higher precision."""

    tol: float | None = None
    max_iter: int = 100
    method: Method = Method.BLOCK_GCR
    reorthogonalize: bool = True
    keep_vectors: bool = False  # store residuals and A-directions in the result trace

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        object.__setattr__(self, "method", Method.parse(self.method))

    def tolerance(self, higher: ScalarKind) -> float:
        return 50.0 * higher.eps if self.tol is None else self.tol


@dataclass
class ConvergenceHistory:
    """One row per completed iteration and column: relative residual 2-norms."""

    method: str
    records: list = field(default_factory=list)  # (iter, column, relres, elapsed)
    converged: np.ndarray | None = None
    iterations: np.ndarray | None = None  # iterations-to-tol per column (-1: not reached)
    status: str = "running"

    def add(self, it, relres, t0, columns=None):
        elapsed = time.perf_counter() - t0
        cols = range(len(relres)) if columns is None else columns
        for c, r in zip(cols, relres):
            self.records.append((int(it), int(c), float(r), elapsed))

    @property
    def niter(self) -> int:
        return max((r[0] for r in self.records), default=0)

    def column(self, c: int) -> np.ndarray:
        return np.array([r[2] for r in self.records if r[1] == c])

    def max_over_columns(self) -> np.ndarray:
        out = {}
        for it, _, r, _ in self.records:
            out[it] = max(out.get(it, 0.0), r)
        return np.array([out[k] for k in sorted(out)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "column", "relative_residual", "elapsed_seconds", "method"])
            for it, c, r, t in self.records:
                w.writerow([it, c, repr(r), f"{t:.6f}", self.method])


@dataclass
class SolveResult:
    x: object
    history: ConvergenceHistory
    residuals: list = field(default_factory=list)  # filled when cfg.keep_vectors
    directions: list = field(default_factory=list)  # the q (= A p) columns
    inconsistency: float = 0.0  # set by hybrid solves on singular systems
    inconsistent: bool = False

    @property
    def converged(self) -> bool:
        return bool(np.all(self.history.converged))

    def __iter__(self):
        return iter((self.x, self.history))


# ---------------------------------------------------------------------------
# operator plumbing
# ---------------------------------------------------------------------------

def as_operator(A):
    """Callable ``X -> A X`` for sparse, dense or callable ``A``."""
    if isinstance(A, SparseMatrix):
        return lambda X: spmv(A, X) if X.ndim == 1 else spmm(A, X)
    if isinstance(A, DDArray):
        return lambda X: A @ X
    if callable(A):
        return A
    A = np.asarray(A, dtype=np.float64)
    return lambda X: (A @ X) if not is_dd(X) else DDArray(A) @ X


def as_preconditioner(Q, higher: ScalarKind):
    """Callable ``R -> Q^{-1} R``; a ``LowerFactor`` is applied via truncate/solve/lift."""
    if Q is None:
        return lambda R: R.copy()
    if isinstance(Q, LowerFactor):
        return lambda R: precond_solve(Q, R, higher)
    return Q


def _setup(A, Q, B):
    higher = kind_of(B) if is_dd(B) else ScalarKind.DOUBLE
    B = asarray(B, higher)
    return as_operator(A), as_preconditioner(Q, higher), B, higher


def _relres(R, bnorm):
    rn = np.atleast_1d(norm(R))
    return rn / bnorm


def _bnorm(B):
    bn = np.atleast_1d(norm(B)).astype(np.float64)
    return np.where(bn == 0, 1.0, bn)


# ---------------------------------------------------------------------------
# iterative refinement
# ---------------------------------------------------------------------------

def iterative_refinement(A, Q, B, cfg: SolverConfig = SolverConfig(method=Method.IR)) -> SolveResult:
    """Mixed-precision iterative refinement, column-wise for a block ``B``.

    ``x0 = Q^{-1} b``; then repeatedly ``x += Q^{-1} r`` with the residual
    ``r = b - A x`` recomputed in the higher precision.  A column whose
    residual stays above ten times its initial value for three consecutive
    steps is declared divergent and frozen.
    """
    apply_A, apply_Q, B, higher = _setup(A, Q, B)
    tol = cfg.tolerance(higher)
    vec = B.ndim == 1
    Bm = B.reshape(-1, 1) if vec else B
    m = Bm.shape[1]
    hist = ConvergenceHistory("ir")
    t0 = time.perf_counter()
    bn = _bnorm(Bm)

    X = apply_Q(Bm)
    R = Bm - apply_A(X)
    trace = [R.copy()] if cfg.keep_vectors else []
    rel = _relres(R, bn)
    hist.add(0, rel, t0)
    initial = rel.copy()
    done = rel <= tol
    iters = np.where(done, 0, -1)
    diverged = np.zeros(m, dtype=bool)
    strikes = np.zeros(m, dtype=int)
    for it in range(1, cfg.max_iter + 1):
        active = np.nonzero(~done & ~diverged)[0]
        if active.size == 0:
            break
        E = apply_Q(R[:, active])
        X[:, active] = X[:, active] + E
        R[:, active] = Bm[:, active] - apply_A(X[:, active])
        if cfg.keep_vectors:
            trace.append(R.copy())
        rel_a = _relres(R[:, active], bn[active])
        rel[active] = rel_a
        hist.add(it, rel_a, t0, active)
        newly = active[rel_a <= tol]
        done[newly] = True
        iters[newly] = it
        bad = rel_a > 10 * initial[active]
        strikes[active] = np.where(bad, strikes[active] + 1, 0)
        diverged |= strikes >= 3
    hist.converged = done
    hist.iterations = iters
    hist.status = "converged" if done.all() else ("diverged" if diverged.any() else "max_iter")
    if vec:
        trace = [t[:, 0] for t in trace]
    return SolveResult(X[:, 0] if vec else X, hist, trace)


# ---------------------------------------------------------------------------
# GCR, single right-hand side
# ---------------------------------------------------------------------------

def _orth_passes(cfg):
    return 2 if cfg.reorthogonalize else 1


def gcr(A, Q, b, cfg: SolverConfig = SolverConfig(method=Method.GCR)) -> SolveResult:
    """Right-preconditioned GCR keeping every search direction.

    ``q_n = A p_n`` is carried along with ``p_n`` (updated by the same
    combination) so each iteration costs one preconditioner solve and one
    matrix-vector product.
    """
    apply_A, apply_Q, b, higher = _setup(A, Q, b)
    if b.ndim != 1:
        raise ValueError("gcr takes a single right-hand side; use block_gcr")
    tol = cfg.tolerance(higher)
    hist = ConvergenceHistory("gcr")
    t0 = time.perf_counter()
    bn = float(_bnorm(b)[0])

    x = apply_Q(b)
    r = b - apply_A(x)
    trace = [r.copy()] if cfg.keep_vectors else []
    rel = float(norm(r)) / bn
    hist.add(0, [rel], t0)
    P, Qs, qq = [], [], []
    it = 0
    status = "converged" if rel <= tol else "max_iter"
    if rel > tol:
        w = apply_Q(r)
        p, q = w, apply_A(w)
        for it in range(1, cfg.max_iter + 1):
            qn = (q @ q)
            qn_f = float(qn.hi if is_dd(qn) else qn)
            if qn_f == 0.0:
                status = "stagnated"
                it -= 1
                break
            alpha = (r @ q) / qn
            x = x + p * alpha
            r = r - q * alpha
            P.append(p)
            Qs.append(q)
            qq.append(qn)
            if cfg.reorthogonalize:
                # re-project r so (r, q_m) stays at roundoff relative to |r|
                for pm, qm, nm in zip(P, Qs, qq):
                    c = (r @ qm) / nm
                    x = x + pm * c
                    r = r - qm * c
            if cfg.keep_vectors:
                trace.append(r.copy())
            rel = float(norm(r)) / bn
            hist.add(it, [rel], t0)
            if rel <= tol:
                status = "converged"
                break
            w = apply_Q(r)
            z = apply_A(w)
            p, q = w, z
            for _ in range(_orth_passes(cfg)):
                for pm, qm, nm in zip(P, Qs, qq):
                    beta = -(q @ qm) / nm
                    p = p + pm * beta
                    q = q + qm * beta
    hist.converged = np.array([status == "converged"])
    hist.iterations = np.array([it if status == "converged" else -1])
    hist.status = status
    return SolveResult(x, hist, trace, list(Qs) if cfg.keep_vectors else [])


# ---------------------------------------------------------------------------
# block GCR
# ---------------------------------------------------------------------------

def block_gcr(A, Q, B, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Right-preconditioned block GCR for several right-hand sides.

    All columns share one Krylov space.  Per iteration ``X += P M^{-1} A_n``
    with ``M = Q_n^T Q_n`` and ``A_n = Q_n^T R_n``; the next block
    ``W = Q^{-1} R`` (unconverged columns only) is made ``A``-orthogonal to
    every stored block through ``M_m^{-1} B_mn``, ``B_mn = -Q_m^T A W``.
    Nearly dependent directions are deflated; if a whole block deflates, the
    remaining columns are finished one by one with :func:`gcr`.
    """
    apply_A, apply_Q, B, higher = _setup(A, Q, B)
    tol = cfg.tolerance(higher)
    eps = higher.eps
    vec = B.ndim == 1
    Bm = B.reshape(-1, 1) if vec else B
    hist = ConvergenceHistory("bgcr")
    t0 = time.perf_counter()
    bn = _bnorm(Bm)

    X = apply_Q(Bm)
    R = Bm - apply_A(X)
    trace = [R.copy()] if cfg.keep_vectors else []
    rel = _relres(R, bn)
    hist.add(0, rel, t0)
    done = rel <= tol
    iters = np.where(done, 0, -1)
    status = "converged" if done.all() else "max_iter"
    blocks = []  # (P_m, Q_m, LU of M_m)

    def new_block(cols):
        W = apply_Q(R[:, cols])
        Z = apply_A(W)
        for _ in range(_orth_passes(cfg)):
            for Pm, Qm, LUm in blocks:
                C = LUm.solve(-(Qm.T @ Z))
                W = W + Pm @ C
                Z = Z + Qm @ C
        G = Z.T @ Z
        keep = pivoted_gram_select(G, eps)
        if keep.size == 0:
            return None
        W, Z = W[:, keep], Z[:, keep]
        G = G[np.ix_(keep, keep)]
        return W, Z, CompleteLU(G, drop_tol=eps)

    it = 0
    fallback = []
    if not done.all():
        blk = new_block(np.nonzero(~done)[0])
        for it in range(1, cfg.max_iter + 1):
            if blk is None:
                fallback = list(np.nonzero(~done)[0])
                it -= 1
                break
            P, Qd, LU = blk
            C = LU.solve(Qd.T @ R)
            X = X + P @ C
            R = R - Qd @ C
            blocks.append(blk)
            if cfg.reorthogonalize:
                for Pm, Qm, LUm in blocks:
                    C = LUm.solve(Qm.T @ R)
                    X = X + Pm @ C
                    R = R - Qm @ C
            if cfg.keep_vectors:
                trace.append(R.copy())
            rel = _relres(R, bn)
            hist.add(it, rel, t0)
            newly = np.nonzero(~done & (rel <= tol))[0]
            done[newly] = True
            iters[newly] = it
            if done.all():
                status = "converged"
                break
            blk = new_block(np.nonzero(~done)[0])

    for c in fallback:
        rc = Bm[:, c] - apply_A(X[:, c])
        ratio = float(_bnorm(rc)[0]) / bn[c]
        sub = gcr(apply_A, apply_Q, rc,
                  SolverConfig(tol=tol / ratio, max_iter=max(1, cfg.max_iter - it)))
        X[:, c] = X[:, c] + sub.x
        for k, r in enumerate(sub.history.column(0)[1:], start=1):
            hist.add(it + k, [r * ratio], t0, [c])
        if sub.converged:
            done[c] = True
            iters[c] = it + int(sub.history.iterations[0])
    if fallback:
        status = "converged" if done.all() else "max_iter"

    hist.converged = done
    hist.iterations = iters
    hist.status = status
    dirs = [b[1] for b in blocks] if cfg.keep_vectors else []
    if vec:
        trace = [t[:, 0] for t in trace]
    return SolveResult(X[:, 0] if vec else X, hist, trace, dirs)


def solve(A, Q, B, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Dispatch on ``cfg.method``; GCR runs column by column for a block."""
    if cfg.method is Method.IR:
        return iterative_refinement(A, Q, B, cfg)
    if cfg.method is Method.BLOCK_GCR:
        return block_gcr(A, Q, B, cfg)
    if B.ndim == 1:
        return gcr(A, Q, B, cfg)
    cols, hist = [], ConvergenceHistory("gcr")
    conv, iters = [], []
    for c in range(B.shape[1]):
        res = gcr(A, Q, B[:, c], cfg)
        cols.append(res.x)
        hist.records.extend((it, c, r, t) for it, _, r, t in res.history.records)
        conv.append(res.history.converged[0])
        iters.append(res.history.iterations[0])
    hist.converged = np.array(conv)
    hist.iterations = np.array(iters)
    hist.status = "converged" if all(conv) else "max_iter"
    if is_dd(cols[0]):
        X = DDArray(np.stack([c.hi for c in cols], axis=1), np.stack([c.lo for c in cols], axis=1))
    else:
        X = np.stack(cols, axis=1)
    return SolveResult(X, hist)
