"""Lower-precision LDU factorization with threshold postponing.

Each node of the bisection tree is eliminated as a dense frontal matrix
(multifrontal-lite): the front holds the node's own indices, indices postponed
by its descendants, and the ancestor indices its subtree touches.  Pivots are
chosen by maximum diagonal magnitude among the node's own indices; elimination
of a node stops as soon as the ratio of consecutive pivots drops below
``tau``, and the remaining indices are postponed.  Postponed indices travel up
inside the update matrices and are finally factorized once more as one block
(the ``Lambda_0`` pass).  The factorized part defines ``K11`` and the factors
serve as the preconditioner ``Q`` of the Krylov solvers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .ordering import BisectionTree, Permutation, adjacency
from .precision import ScalarKind, lift, truncate, is_dd
from .sparsemat import SparseMatrix

__all__ = [
    "NodeFactor",
    "LowerFactor",
    "PostponedPartition",
    "factor_with_postponing",
    "precond_solve",
    "partial_ldu",
]

PANEL = 64


@dataclass(eq=False)
class NodeFactor:
    """Factors of one front: ``pivots`` eliminated, ``rows`` left over."""

    node: int  # position in the tree's elimination order; -1 for the Lambda_0 pass
    pivots: np.ndarray
    rows: np.ndarray
    L11: np.ndarray
    U11: np.ndarray
    d: np.ndarray
    L21: np.ndarray
    U12: np.ndarray

    def trim(self, keep: int) -> "NodeFactor":
        """Drop the trailing pivots beyond ``keep`` (they rejoin the hard part)."""
        return NodeFactor(self.node, self.pivots[:keep], self.rows,
                          self.L11[:keep, :keep], self.U11[:keep, :keep], self.d[:keep],
                          self.L21[:, :keep], self.U12[:keep, :])


@dataclass(frozen=True, eq=False)
class PostponedPartition:
    lambda1: np.ndarray
    lambda2: np.ndarray
    pi1: Permutation
    per_block_postponed: list

    @property
    def N(self) -> int:
        return len(self.lambda1)

    @property
    def M(self) -> int:
        return len(self.lambda2)

    @property
    def moderate(self) -> np.ndarray:
        """``lambda1`` in increasing index order: the row order of ``K11``."""
        return np.sort(self.lambda1)

    @property
    def permutation(self) -> np.ndarray:
        """Original indices in ``[Lambda_1, Lambda_2]`` order."""
        return np.concatenate([self.lambda1, self.lambda2]).astype(np.int64)


@dataclass(eq=False)
class LowerFactor:
    n: int
    kind: ScalarKind
    nodes: list
    lambda1: np.ndarray
    lambda2: np.ndarray
    pivot_log: list = field(default_factory=list)

    @property
    def moderate(self) -> np.ndarray:
        """``lambda1`` in increasing index order: the row order of ``K11``."""
        return np.sort(self.lambda1)

    @property
    def d(self) -> np.ndarray:
        return np.concatenate([nf.d for nf in self.nodes]) if self.nodes else np.zeros(0)

    def dense_factors(self):
        """Dense ``(L, D, U)`` in ``lambda1`` order; for checks on small problems."""
        N = len(self.lambda1)
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[self.lambda1] = np.arange(N)
        L = np.eye(N, dtype=self.kind.dtype)
        U = np.eye(N, dtype=self.kind.dtype)
        for nf in self.nodes:
            p = pos[nf.pivots]
            L[np.ix_(p, p)] = nf.L11
            U[np.ix_(p, p)] = nf.U11
            r = pos[nf.rows]
            live = r >= 0
            L[np.ix_(r[live], p)] = nf.L21[live]
            U[np.ix_(p, r[live])] = nf.U12[:, live]
        return L, self.d, U


# ---------------------------------------------------------------------------
# dense partial factorization of a front
# ---------------------------------------------------------------------------

def partial_ldu(front: np.ndarray, ncand: int, tau: float, reference: float | None = None,
                panel: int = PANEL, blocked=None):
    """Eliminate candidates ``0..ncand-1`` of ``front`` with threshold postponing.

    Pivots are the largest remaining diagonal magnitudes among the candidates.
    Elimination stops when ``|d_new / d_prev| < tau``; for the first pivot
    ``reference`` plays the role of ``d_prev`` (``None``: always accepted unless
    exactly zero).  The trailing update is delayed and applied per panel of
    ``panel`` pivots.

    Returns ``(order, Lc, Ur, d, schur, rest)`` where ``order`` lists pivot
    positions, ``Lc`` (nf x p) and ``Ur`` (p x nf) hold the unit factors over
    all front positions, ``rest`` the non-pivot positions and ``schur`` their
    Schur complement.  Positions flagged in ``blocked`` are never pivots.
    """
    A = np.array(front, copy=True)
    nf = A.shape[0]
    dt = A.dtype
    alive = np.ones(nf, dtype=bool)
    cand = np.zeros(nf, dtype=bool)
    cand[:ncand] = True
    if blocked is not None:
        cand &= ~np.asarray(blocked, dtype=bool)
    dcur = np.diag(A).copy()
    order, dvals, Lcols, Urows = [], [], [], []
    pL, pU, pd = [], [], []
    prev = reference

    def flush():
        if pL:
            live = np.nonzero(alive)[0]
            Lm = np.stack(pL, axis=1)[live]
            Um = np.stack(pU, axis=0)[:, live] * np.asarray(pd, dtype=dt)[:, None]
            A[np.ix_(live, live)] -= Lm @ Um
            pL.clear(), pU.clear(), pd.clear()

    while True:
        idx = np.nonzero(cand & alive)[0]
        if idx.size == 0:
            break
        p = int(idx[np.argmax(np.abs(dcur[idx]))])
        dp = dcur[p]
        if dp == 0:
            break
        if prev is not None and abs(dp / prev) < tau:
            break
        col = A[:, p].copy()
        row = A[p, :].copy()
        if pL:
            Lm = np.stack(pL, axis=1)
            Um = np.stack(pU, axis=0)
            dd = np.asarray(pd, dtype=dt)
            col -= Lm @ (dd * Um[:, p])
            row -= (Lm[p] * dd) @ Um
        d = col[p]
        alive[p] = False
        lcol = np.where(alive, col / d, 0).astype(dt)
        urow = np.where(alive, row / d, 0).astype(dt)
        dcur -= lcol * d * urow
        lcol[p] = 1
        urow[p] = 1
        order.append(p)
        dvals.append(d)
        Lcols.append(lcol)
        Urows.append(urow)
        pL.append(np.where(alive, lcol, 0).astype(dt))
        pU.append(np.where(alive, urow, 0).astype(dt))
        pd.append(d)
        prev = d
        if len(pL) == panel:
            flush()
    flush()
    rest = np.nonzero(alive)[0]
    schur = A[np.ix_(rest, rest)]
    if order:
        Lc = np.stack(Lcols, axis=1)
        Ur = np.stack(Urows, axis=0)
    else:
        Lc = np.zeros((nf, 0), dtype=dt)
        Ur = np.zeros((0, nf), dtype=dt)
    return np.asarray(order, dtype=np.int64), Lc, Ur, np.asarray(dvals, dtype=dt), schur, rest


def _node_factor(node, front_idx, order, Lc, Ur, d, rest):
    return NodeFactor(
        node=node,
        pivots=front_idx[order],
        rows=front_idx[rest],
        L11=Lc[order],
        U11=Ur[:, order],
        d=d,
        L21=Lc[rest],
        U12=Ur[:, rest],
    )


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def factor_with_postponing(K: SparseMatrix, tree: BisectionTree, tau: float = 0.05,
                           n_extra: int = 4, lower: ScalarKind = ScalarKind.SINGLE,
                           force_postpone=None):
    """Factorize the scaled matrix ``K`` in ``lower`` precision along ``tree``.

    ``force_postpone`` lists indices that are never used as pivots, so they end
    up in ``lambda2`` whatever their magnitude (handy for tests).

    Returns ``(LowerFactor, PostponedPartition)``.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if n_extra < 0:
        raise ValueError("n_extra must be non-negative")
    if lower is ScalarKind.DOUBLEDOUBLE:
        raise ValueError("the lower precision must be single or double")
    n = K.nrows
    dt = lower.dtype
    Kl = K.to_scipy(lower)
    g = adjacency(K)
    nnodes = len(tree.node_sets)

    in_subtree = np.zeros((nnodes, n), dtype=bool)  # filled lazily child->parent
    contrib = {}  # node position -> (global indices, dense update matrix)
    nodes, per_block = [], []
    loc = np.full(n, -1, dtype=np.int64)
    forced = np.zeros(n, dtype=bool)
    if force_postpone is not None:
        forced[np.asarray(force_postpone, dtype=np.int64)] = True

    for pos in range(nnodes):
        F = np.sort(tree.node_sets[pos])
        kids = tree.children(pos)
        mask = np.zeros(n, dtype=bool)
        mask[F] = True
        for c in kids:
            mask |= in_subtree[c]
        in_subtree[pos] = mask
        # ancestors touched by the subtree
        touch = np.asarray(g @ mask.astype(np.float64)).ravel() > 0
        anc = np.zeros(n, dtype=bool)
        for a in tree.ancestors(pos):
            anc[tree.node_sets[a]] = True
        B = np.nonzero(touch & anc & ~mask)[0]
        delayed = []
        for c in kids:
            cidx, _ = contrib[c]
            delayed.append(cidx[~np.isin(cidx, B) & ~np.isin(cidx, F)])
        D = np.sort(np.concatenate(delayed)) if delayed else np.zeros(0, dtype=np.int64)
        front_idx = np.concatenate([F, D, B]).astype(np.int64)
        nf = len(front_idx)
        loc[front_idx] = np.arange(nf)

        front = np.zeros((nf, nf), dtype=dt)
        fb = np.concatenate([F, B]).astype(np.int64)
        if fb.size:
            blk = Kl[fb][:, fb].toarray()
            nfF = len(F)
            blk[nfF:, nfF:] = 0  # ancestor-ancestor entries belong to later fronts
            lf = loc[fb]
            front[np.ix_(lf, lf)] += blk
        for c in kids:
            cidx, cmat = contrib.pop(c)
            lc = loc[cidx]
            front[np.ix_(lc, lc)] += cmat

        order, Lc, Ur, d, schur, rest = partial_ldu(front, len(F), tau,
                                                    blocked=forced[front_idx])
        nodes.append(_node_factor(pos, front_idx, order, Lc, Ur, d, rest))
        per_block.append((pos, len(F) - len(order)))
        contrib[pos] = (front_idx[rest], schur)
        loc[front_idx] = -1

    # Lambda_0: everything postponed below, already carrying its Schur complement
    lam0 = np.zeros(0, dtype=np.int64)
    if nnodes:
        root = nnodes - 1
        lam0, S0 = contrib.pop(root)
    postponed_any = lam0.size > 0
    hat0 = np.zeros(0, dtype=np.int64)
    if postponed_any:
        # scaled diagonals have unit magnitude, so 1 is the reference for the first pivot
        order, Lc, Ur, d, _, rest = partial_ldu(S0, len(lam0), tau, reference=1.0,
                                                blocked=forced[lam0])
        nodes.append(_node_factor(-1, lam0, order, Lc, Ur, d, rest))
        per_block.append((-1, len(rest)))
        hat0 = lam0[rest]

    # every postponed index went through the Lambda_0 pass; only its leftovers stay hard
    lambda2 = [hat0]

    moved = []
    if postponed_any and n_extra:
        need = n_extra
        for i in range(len(nodes) - 1, -1, -1):
            if need == 0:
                break
            k = len(nodes[i].pivots)
            take = min(need, k)
            if take:
                moved.insert(0, nodes[i].pivots[k - take:])
                nodes[i] = nodes[i].trim(k - take)
                need -= take
    lambda2 = np.concatenate(lambda2 + moved).astype(np.int64)
    nodes = [nf for nf in nodes if len(nf.pivots) or nf.node >= 0]
    lambda1 = (np.concatenate([nf.pivots for nf in nodes]).astype(np.int64)
               if nodes else np.zeros(0, dtype=np.int64))

    log = []
    step = 0
    for nf in nodes:
        for i, dv in zip(nf.pivots, nf.d):
            log.append((step, int(i), float(dv)))
            step += 1

    # pi1 acts on Lambda_1 taken in increasing index order
    pi1 = Permutation(np.searchsorted(np.sort(lambda1), lambda1))
    part = PostponedPartition(lambda1, lambda2, pi1, per_block)
    return LowerFactor(n, lower, nodes, lambda1, lambda2, log), part


# ---------------------------------------------------------------------------
# preconditioner solve
# ---------------------------------------------------------------------------

def precond_solve(F: LowerFactor, B, higher: ScalarKind | None = None):
    """Solve ``K11 E = B`` with the lower-precision factors.

    Rows of ``B`` follow the indices of ``lambda1`` in increasing order (the
    pivot order ``pi1`` is applied internally).  ``B`` is truncated to the
    lower precision, pushed through block forward, diagonal and backward
    substitution, and lifted back.
    """
    if higher is None:
        higher = ScalarKind.DOUBLEDOUBLE if is_dd(B) else ScalarKind.DOUBLE
    shape = B.shape
    N = len(F.lambda1)
    if shape[0] != N:
        raise ValueError(f"right-hand side has {shape[0]} rows, factor covers {N}")
    vec = len(shape) == 1
    Bl = truncate(B, F.kind)
    Bl = np.asarray(Bl, dtype=F.kind.dtype).reshape(N, -1)
    Y = np.zeros((F.n, Bl.shape[1]), dtype=F.kind.dtype)
    rows = F.moderate
    Y[rows] = Bl
    for nf in F.nodes:
        if not len(nf.pivots):
            continue
        yp = sla.solve_triangular(nf.L11, Y[nf.pivots], lower=True, unit_diagonal=True,
                                  check_finite=False)
        if len(nf.rows):
            Y[nf.rows] -= nf.L21 @ yp
        Y[nf.pivots] = yp / nf.d[:, None]
    Y[F.lambda2] = 0
    for nf in reversed(F.nodes):
        if not len(nf.pivots):
            continue
        yp = Y[nf.pivots]
        if len(nf.rows):
            yp = yp - nf.U12 @ Y[nf.rows]
        Y[nf.pivots] = sla.solve_triangular(nf.U11, yp, lower=False, unit_diagonal=True,
                                            check_finite=False)
    out = Y[rows]
    if vec:
        out = out[:, 0]
    return lift(out, higher)
