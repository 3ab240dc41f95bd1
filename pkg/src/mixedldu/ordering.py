"""Nested-dissection bisection tree.

Recursive level-set bisection of the adjacency graph of ``K + K^T``: from a
pseudo-peripheral vertex the breadth-first level structure is cut at the level
holding the median vertex, and the vertices of that level that touch the next
one form the separator.  Ties are always broken by the smallest index, so the
tree is a pure function of the sparsity pattern.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .sparsemat import SparseMatrix

__all__ = ["Permutation", "BisectionTree", "build_bisection_tree", "default_levels"]

log = logging.getLogger(__name__)

MAX_LEVELS = 8


@dataclass(frozen=True, eq=False)
class Permutation:
    """``forward[k]`` is the original index placed at new position ``k``;
    ``inverse[i]`` is the new position of original index ``i``."""

    forward: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.int64)
        object.__setattr__(self, "forward", fwd)
        if self.inverse is None:
            inv = np.empty_like(fwd)
            inv[fwd] = np.arange(len(fwd))
            object.__setattr__(self, "inverse", inv)
        if not np.array_equal(self.inverse[self.forward], np.arange(len(fwd))):
            raise ValueError("forward and inverse are not mutually inverse")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def __len__(self):
        return len(self.forward)


@dataclass(frozen=True, eq=False)
class BisectionTree:
    """Node sets of an ``m``-level bisection tree in elimination order.

    Nodes carry heap numbers (root 1, children ``2h`` and ``2h+1``); leaves come
    first, separators follow by decreasing level, so children always precede
    their parent.
    """

    levels: int
    node_sets: list
    heap_ids: list

    def level_of(self, pos: int) -> int:
        return int(math.floor(math.log2(self.heap_ids[pos]))) + 1

    def parent(self, pos: int):
        h = self.heap_ids[pos]
        return None if h == 1 else self._pos[h // 2]

    def children(self, pos: int):
        h = self.heap_ids[pos]
        return [self._pos[c] for c in (2 * h, 2 * h + 1) if c in self._pos]

    @property
    def _pos(self):
        try:
            return self.__dict__["_posmap"]
        except KeyError:
            m = {h: i for i, h in enumerate(self.heap_ids)}
            object.__setattr__(self, "_posmap", m)
            return m

    def ancestors(self, pos: int):
        out = []
        p = self.parent(pos)
        while p is not None:
            out.append(p)
            p = self.parent(p)
        return out

    def subtree(self, pos: int):
        """Positions of ``pos`` and all of its descendants."""
        out, stack = [], [pos]
        while stack:
            p = stack.pop()
            out.append(p)
            stack.extend(self.children(p))
        return sorted(out)

    def owner(self, n: int) -> np.ndarray:
        own = np.empty(n, dtype=np.int64)
        for pos, s in enumerate(self.node_sets):
            own[s] = pos
        return own


def default_levels(n: int) -> int:
    """Levels giving leaf blocks of roughly 256-1024 indices, at most 8."""
    if n <= 1024:
        return 1
    return int(min(MAX_LEVELS, 1 + math.floor(math.log2(n / 512))))


def adjacency(k: SparseMatrix) -> sp.csr_matrix:
    """Symmetrized pattern of ``K`` without the diagonal."""
    p = k.pattern()
    g = (p + p.T).tocsr()
    g.setdiag(0)
    g.eliminate_zeros()
    g.data[:] = 1.0
    return g


def _levels_from(g: sp.csr_matrix, root: int):
    n = g.shape[0]
    level = np.full(n, -1, dtype=np.int64)
    level[root] = 0
    frontier = np.array([root])
    sets = []
    d = 0
    while frontier.size:
        sets.append(np.sort(frontier))
        ind = np.zeros(n)
        ind[frontier] = 1.0
        reach = np.nonzero(g @ ind)[0]
        nxt = reach[level[reach] < 0]
        d += 1
        level[nxt] = d
        frontier = nxt
    return sets, level


def _pseudo_peripheral(g: sp.csr_matrix, start: int):
    deg = np.diff(g.indptr)
    root = start
    sets, level = _levels_from(g, root)
    while True:
        last = sets[-1]
        cand = last[np.lexsort((last, deg[last]))][0]
        csets, clevel = _levels_from(g, cand)
        if len(csets) > len(sets):
            root, sets, level = cand, csets, clevel
        else:
            return root, sets, level


def _bisect(g: sp.csr_matrix):
    """Split local vertices into (half_a, half_b, separator) as local indices."""
    n = g.shape[0]
    ncomp, labels = csgraph.connected_components(g, directed=False)
    if ncomp > 1:
        # balance whole components, largest first; no separator needed
        sizes = np.bincount(labels)
        firsts = np.array([np.argmax(labels == c) for c in range(ncomp)])
        order = np.lexsort((firsts, -sizes))
        a_parts, b_parts, na, nb = [], [], 0, 0
        for c in order:
            members = np.nonzero(labels == c)[0]
            if na <= nb:
                a_parts.append(members)
                na += len(members)
            else:
                b_parts.append(members)
                nb += len(members)
        return (np.sort(np.concatenate(a_parts)), np.sort(np.concatenate(b_parts)),
                np.array([], dtype=np.int64))
    if n < 3:
        return np.arange(n), np.array([], dtype=np.int64), np.array([], dtype=np.int64)
    _, sets, level = _pseudo_peripheral(g, 0)
    h = len(sets) - 1
    if h < 2:
        return np.arange(n), np.array([], dtype=np.int64), np.array([], dtype=np.int64)
    counts = np.cumsum([len(s) for s in sets])
    k = int(np.searchsorted(counts, n // 2, side="right"))
    k = min(max(k, 1), h - 1)
    lk = sets[k]
    ind = np.zeros(n)
    ind[sets[k + 1]] = 1.0
    touches = (g @ ind)[lk] > 0
    sep = lk[touches]
    half_a = np.nonzero((level < k) | ((level == k) & ~np.isin(np.arange(n), sep)))[0]
    half_b = np.nonzero(level > k)[0]
    return half_a, half_b, np.sort(sep)


def _build(g: sp.csr_matrix, m: int):
    n = g.shape[0]
    sets = {}
    stack = [(1, np.arange(n))]
    while stack:
        heap, verts = stack.pop()
        depth = int(math.floor(math.log2(heap))) + 1
        if depth == m:
            if verts.size == 0:
                return None
            sets[heap] = verts
            continue
        sub = g[verts][:, verts]
        a, b, s = _bisect(sub)
        sets[heap] = verts[s]
        stack.append((2 * heap, verts[a]))
        stack.append((2 * heap + 1, verts[b]))
    return sets


def build_bisection_tree(k: SparseMatrix, m: int | None = None):
    """Return ``(Permutation, BisectionTree)`` for an ``m``-level dissection.

    If some leaf would be empty, ``m`` is lowered until every leaf holds at
    least one index; the tree records the level count actually used.
    """
    if k.nrows != k.ncols:
        raise ValueError("ordering needs a square matrix")
    n = k.nrows
    requested = default_levels(n) if m is None else int(m)
    if requested < 1:
        raise ValueError("m must be at least 1")
    g = adjacency(k)
    levels = requested
    while True:
        sets = _build(g, levels) if n else {1: np.arange(0)}
        if sets is not None:
            break
        levels -= 1
    if levels != requested:
        log.warning("bisection levels clamped from %d to %d", requested, levels)

    heap_ids = []
    for depth in range(levels, 0, -1):
        heap_ids.extend(range(2 ** (depth - 1), 2 ** depth))
    node_sets = [np.asarray(sets[h], dtype=np.int64) for h in heap_ids]
    perm = Permutation(np.concatenate(node_sets) if node_sets else np.arange(0))
    return perm, BisectionTree(levels, node_sets, heap_ids)
