"""Synthetic test matrices with known structure.

Every generator is seeded and returns exactly representable (mostly integer)
entries, so the intended matrix is the stored one in every precision and the
structural property it was built for (kernel dimension, near-singular Schur
complement, conditioning) holds exactly.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .precision import DDArray
from .sparsemat import SparseMatrix, Symmetry

__all__ = [
    "mod11_solution",
    "grid_laplacian",
    "floating_subdomains",
    "forced_postponing_instance",
    "fibonacci_pairs",
    "diffusion_contrast",
    "as_double_double",
]


def mod11_solution(n: int) -> np.ndarray:
    """``x_i = i mod 11`` with 1-based ``i``."""
    return (np.arange(1, n + 1) % 11).astype(np.float64)


def _grid_edges(nx, ny):
    idx = np.arange(nx * ny).reshape(ny, nx)
    h = np.c_[idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    v = np.c_[idx[:-1, :].ravel(), idx[1:, :].ravel()]
    return np.vstack([h, v])


def _laplacian(n, edges, weights):
    i, j = edges[:, 0], edges[:, 1]
    off = sp.coo_matrix((-weights, (i, j)), shape=(n, n))
    a = off + off.T
    deg = -np.asarray(a.sum(axis=1)).ravel()
    return (a + sp.diags(deg)).tocsr()


def grid_laplacian(nx: int, ny: int, weights=None, shift: float = 0.0) -> sp.csr_matrix:
    """Weighted 5-point graph Laplacian of an ``nx x ny`` grid plus ``shift * I``."""
    edges = _grid_edges(nx, ny)
    w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
    return (_laplacian(nx * ny, edges, w) + shift * sp.eye(nx * ny)).tocsr()


def floating_subdomains(kernel_dim: int, size: int = 1200, seed: int = 0) -> SparseMatrix:
    """Symmetric positive semidefinite matrix with a kernel of dimension ``kernel_dim``.

    The index set is cut into ``kernel_dim`` floating grid patches (weighted
    graph Laplacians with integer weights, each with its constant vector as
    kernel) and one anchored patch made definite by a diagonal shift.  Each
    floating patch is tied to the anchored one by a rank-one term ``c c^T``
    with ``c = w (e_i - e_j + e_k)``, ``i, j`` in the floating patch and ``k``
    anchored; ``c`` is orthogonal to every patch constant, so the kernel is
    exactly the span of the floating constants.  A random symmetric relabeling
    hides the block structure from the ordering.
    """
    rng = np.random.default_rng(seed)
    nparts = kernel_dim + 1
    side = max(3, int(np.sqrt(size / nparts)))
    blocks = []
    for p in range(nparts):
        edges = _grid_edges(side, side)
        w = rng.integers(1, 10, size=len(edges)).astype(np.float64)
        lap = _laplacian(side * side, edges, w)
        if p == kernel_dim:  # anchored patch
            lap = lap + sp.diags(rng.integers(1, 4, size=side * side).astype(np.float64))
        blocks.append(lap)
    a = sp.block_diag(blocks).tocsr()
    n = a.shape[0]
    m = side * side
    anchor0 = kernel_dim * m
    rows, cols, vals = [], [], []
    for p in range(kernel_dim):
        src = p * m + rng.integers(m)
        dst = anchor0 + rng.integers(m)
        w = float(rng.integers(1, 4))
        src2 = p * m + (src - p * m + 1) % m
        c = {src: w, src2: -w, dst: w}
        for i, ci in c.items():
            for j, cj in c.items():
                rows.append(i)
                cols.append(j)
                vals.append(ci * cj)
    a = (a + sp.coo_matrix((vals, (rows, cols)), shape=(n, n))).tocsr()
    perm = rng.permutation(n)
    a = a[perm][:, perm].tocsr()
    a.sum_duplicates()
    a.eliminate_zeros()
    return SparseMatrix.from_scipy(a, Symmetry.SYMMETRIC)


def forced_postponing_instance(n: int, npost: int, seed: int = 0, density: float = 0.15):
    """Random nonsymmetric sparse matrix with a dominant diagonal, plus
    ``npost`` distinct indices to force into the postponed set."""
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=density, random_state=rng, format="csr",
                  data_rvs=lambda k: rng.uniform(-1, 1, k))
    a = a + a.T.multiply(rng.uniform(0.5, 1.5))  # symmetric pattern, nonsymmetric values
    rowsum = np.asarray(abs(a).sum(axis=1)).ravel()
    d = (rowsum + rng.uniform(0.5, 2.0, n)) * rng.choice([-1.0, 1.0], n)
    a = (a + sp.diags(d)).tocsr()
    forced = np.sort(rng.choice(n, size=npost, replace=False))
    return SparseMatrix.from_scipy(a), forced


def _fib(k):
    a, b = 0, 1
    for _ in range(k):
        a, b = b, a + b
    return a


def fibonacci_pairs(size: int = 600, npairs: int = 3, order: int = 44, seed: int = 0):
    """Integer matrix with condition number about ``5 * F_order**2``.

    A shifted grid Laplacian carries ``npairs`` embedded blocks
    ``[[F(k+1), F(k)], [F(k), F(k-1)]]`` (determinant ``+-1``).  The whole
    matrix is then mixed by a congruence ``T^T H T`` with a unimodular
    integer ``T = I + E`` (``E`` strictly upper, one unit entry per row at
    most), which keeps all entries integer and below ``2**53`` while spreading
    the near-singular direction over many indices.

    Returns ``(K, witness)``: ``K z = T^T e`` exactly for the integer vector
    ``witness = z``, where ``e`` is a signed unit vector, so
    ``||K|| ||z|| / ||K z||`` is a certified lower bound of the condition
    number.
    """
    rng = np.random.default_rng(seed)
    side = int(np.sqrt(size - 2 * npairs))
    ng = side * side
    lap = grid_laplacian(side, side, rng.integers(1, 5, size=2 * side * (side - 1)).astype(float),
                         shift=1.0)
    f0, f1, f2 = _fib(order - 1), _fib(order), _fib(order + 1)
    pair = np.array([[f2, f1], [f1, f0]], dtype=np.float64)
    h = sp.block_diag([lap] + [sp.csr_matrix(pair)] * npairs).tocsr()
    n = h.shape[0]
    # unimodular mixing: T = I + E, E[i, j] = 1 for a few (i < j)
    # (pair rows stay unmixed, so the pairs never mix with each other)
    rows = rng.choice(ng, size=n // 4, replace=False)
    cols = np.array([rng.integers(i + 1, min(n, i + 30)) for i in rows])
    e = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    t = (sp.eye(n) + e).tocsr()
    k = (t.T @ h @ t).tocsr()
    k.sum_duplicates()
    k.eliminate_zeros()
    if np.abs(k.data).max() >= 2.0 ** 53:
        raise ValueError("entries too large to be exact in double")
    # witness: H u = (0, .., 0, +-1, ..) for u = (F(k), -F(k+1)) on the first pair
    u = np.zeros(n)
    u[ng] = f1
    u[ng + 1] = -f2
    z = sp.linalg.spsolve_triangular(t, u, lower=False, unit_diagonal=True)
    perm = rng.permutation(n)
    kp = k[perm][:, perm].tocsr()
    return SparseMatrix.from_scipy(kp, Symmetry.SYMMETRIC), z[perm]


def diffusion_contrast(nx: int = 45, ny: int = 45, contrast: float = 1e4, seed: int = 0,
                       shift: float = 1e-3) -> SparseMatrix:
    """Grid diffusion operator with log-uniform edge conductivities.

    Conductivities range over ``[1, contrast]``; a small relative diagonal
    shift keeps the operator definite.  Entries are rounded to single
    precision so the stored matrix is the same in every precision.
    """
    rng = np.random.default_rng(seed)
    edges = _grid_edges(nx, ny)
    w = np.exp(rng.uniform(0.0, np.log(contrast), len(edges)))
    a = _laplacian(nx * ny, edges, w)
    d = np.asarray(a.diagonal())
    a = (a + sp.diags(shift * d)).tocsr()
    a.data = a.data.astype(np.float32).astype(np.float64)
    return SparseMatrix.from_scipy(a, Symmetry.SYMMETRIC)


def as_double_double(k: SparseMatrix) -> SparseMatrix:
    """Same matrix with double-double value storage."""
    return SparseMatrix(k.nrows, k.ncols, k.row_starts, k.col_indices,
                        DDArray(np.asarray(k.values, dtype=np.float64)), k.symmetry)
