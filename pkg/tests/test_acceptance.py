"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly
(``python tests/test_acceptance.py``).  The protein regression needs the
36,414 x 36,414 ``pdb1HYS`` Matrix Market file; point ``MIXEDLDU_PROTEIN``
at it or place it in ``data/pdb1HYS.mtx``.  Without it that criterion is
skipped.
"""
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.sparse.linalg import svds

sys.path.insert(0, str(Path(__file__).parent))

from _invariants import ir_recurrence_error, krylov_invariants  # noqa: E402
from conftest import dense_schur, scaled_dense  # noqa: E402
from mixedldu.fixtures import (as_double_double, diffusion_contrast, fibonacci_pairs,  # noqa: E402
                               floating_subdomains, forced_postponing_instance,
                               mod11_solution)
from mixedldu.hybrid import direct_factor, hybrid_factor, hybrid_solve  # noqa: E402
from mixedldu.krylov import SolverConfig, solve  # noqa: E402
from mixedldu.lowfactor import factor_with_postponing  # noqa: E402
from mixedldu.ordering import build_bisection_tree  # noqa: E402
from mixedldu.precision import (DDArray, PrecisionPair, ScalarKind, asarray, norm,  # noqa: E402
                                to_float64)
from mixedldu.sparsemat import read_matrix_market, scale_symmetric, spmm, spmv  # noqa: E402

pytestmark = pytest.mark.acceptance

SD, DDP = PrecisionPair.SINGLE_DOUBLE, PrecisionPair.DOUBLE_DD
S, D, DD = ScalarKind.SINGLE, ScalarKind.DOUBLE, ScalarKind.DOUBLEDOUBLE
ROOT = Path(__file__).resolve().parents[1]


class Skip(Exception):
    pass


def maxrel(k, x, b):
    kind = DD if isinstance(b, DDArray) else D
    r = to_float64(b - spmv(k, asarray(x, kind)))
    return float(np.abs(r).max() / np.abs(to_float64(b)).max())


# ---------------------------------------------------------------------------
# criteria; each returns (passed, detail, seconds, time limit)
# ---------------------------------------------------------------------------

def criterion_1():
    """Schur complement from the Krylov solve agrees with the dense formula."""
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(20, 101))
        k, forced = forced_postponing_instance(n, int(rng.integers(2, 9)), seed=seed)
        F = hybrid_factor(k, pair=SD, force_postpone=forced)
        A = scaled_dense(k, F.scaling.q)
        ref = dense_schur(A, F.partition.moderate, F.partition.lambda2)
        err = np.linalg.norm(to_float64(F.schur.S22) - ref) / np.linalg.norm(ref)
        worst = max(worst, err)
    dt = time.perf_counter() - t0
    return worst <= 1e-10 and dt < 10, f"worst relative S22 error {worst:.2e}", dt, 10


def protein_path():
    env = os.environ.get("MIXEDLDU_PROTEIN")
    for p in ([Path(env)] if env else []) + [ROOT / "data" / "pdb1HYS.mtx"]:
        if p.is_file():
            return p
    return None


def criterion_2():
    """Protein matrix regression (skipped when the file is absent)."""
    path = protein_path()
    if path is None:
        raise Skip("pdb1HYS.mtx not found (set MIXEDLDU_PROTEIN)")
    t0 = time.perf_counter()
    k = read_matrix_market(path)
    xs = mod11_solution(k.nrows)
    b = spmv(k, xs)
    F = hybrid_factor(k, tau=0.05, pair=SD)
    x = hybrid_solve(F, b).x
    res = maxrel(k, x, b)
    err = float(np.abs(x - xs).max() / np.abs(xs).max())
    P = direct_factor(k, S, tau=0.05)
    res_single = maxrel(k, hybrid_solve(P, b).x, b)
    dt = time.perf_counter() - t0
    ok = F.M == 17 and res <= 1e-13 and err <= 1e-4 and res_single >= 1e6 * res and dt < 300
    return ok, (f"M={F.M} residual {res:.2e} error {err:.2e} "
                f"pure-single residual {res_single:.2e}"), dt, 300


def criterion_3():
    """Kernel dimensions 1, 2 and 6 detected exactly in both pairs."""
    t0 = time.perf_counter()
    found, ok = [], True
    for kdim in (1, 2, 6):
        k = floating_subdomains(kdim, 1800, seed=kdim)
        for pair in (SD, DDP):
            kk = as_double_double(k) if pair is DDP else k
            got = hybrid_factor(kk, pair=pair).kernel_dim
            ok &= got == kdim
            found.append(f"{kdim}:{pair.label}->{got}")
        # the pure lower-precision run may miss; reported only
        found.append(f"{kdim}:f32->{direct_factor(k, S).kernel_dim}")
    dt = time.perf_counter() - t0
    return ok and dt < 60, " ".join(found), dt, 60


def criterion_4():
    """Iterations to tolerance: block GCR <= GCR <= IR, block GCR within 10."""
    t0 = time.perf_counter()
    K = diffusion_contrast(40, 50, contrast=1e6, seed=0, shift=2e-6)
    Ks, _ = scale_symmetric(K)
    _, tree = build_bisection_tree(Ks)
    F, part = factor_with_postponing(Ks, tree, 0.05, 4, S)
    l1 = part.moderate
    A = Ks.submatrix(l1, l1)
    X = np.random.default_rng(1).standard_normal((len(l1), 16))
    B = spmm(A, X)
    its = {}
    for method in ("bgcr", "gcr", "ir"):
        _, h = solve(A, F, B, SolverConfig(method=method, max_iter=60))
        its[method] = int(h.iterations.max()) if h.converged.all() else np.inf  # not reached
    ok = its["bgcr"] <= its["gcr"] <= its["ir"] and its["bgcr"] <= 10
    dt = time.perf_counter() - t0
    return ok and dt < 30, f"n={K.nrows} iterations {its}", dt, 30


def criterion_5():
    """Krylov invariants on 100 random instances."""
    t0 = time.perf_counter()
    worst = {"orthogonality": 0.0, "galerkin": 0.0, "increase": 0.0, "ir": 0.0}
    for seed in range(100):
        for key, v in krylov_invariants(seed).items():
            worst[key] = max(worst[key], v)
        worst["ir"] = max(worst["ir"], ir_recurrence_error(seed))
    ok = (worst["orthogonality"] <= 1e-10 and worst["galerkin"] <= 1e-10
          and worst["increase"] <= 0.0 and worst["ir"] <= 1e-8)
    dt = time.perf_counter() - t0
    return ok and dt < 30, " ".join(f"{k} {v:.1e}" for k, v in worst.items()), dt, 30


def random_dd(rng, n):
    hi = rng.standard_normal(n) * np.exp2(rng.integers(-60, 60, n))
    lo = hi * rng.uniform(-1, 1, n) * 2.0 ** -54
    s = hi + lo
    return DDArray(s, lo - (s - hi))


def dd_oracle_worst(n=1_000_000, seed=7):
    """Worst relative error of vectorized add/mul against exact rationals."""
    rng = np.random.default_rng(seed)
    a, b = random_dd(rng, n), random_dd(rng, n)
    # a tenth of the pairs nearly cancel under addition
    c = rng.random(n) < 0.1
    b.hi[c], b.lo[c] = -a.hi[c], -a.lo[c] * rng.uniform(0, 1, c.sum())
    add, mul = a + b, a * b
    cols = [a.hi.tolist(), a.lo.tolist(), b.hi.tolist(), b.lo.tolist(),
            add.hi.tolist(), add.lo.tolist(), mul.hi.tolist(), mul.lo.tolist()]
    F = Fraction
    worst_add = worst_mul = 0.0
    for ah, al, bh, bl, sh, sl, ph, pl in zip(*cols):
        x = F(ah) + F(al)
        y = F(bh) + F(bl)
        e = x + y
        if e:
            worst_add = max(worst_add, abs(float((F(sh) + F(sl) - e) / e)))
        elif sh or sl:
            worst_add = np.inf
        e = x * y
        worst_mul = max(worst_mul, abs(float((F(ph) + F(pl) - e) / e)))
    return worst_add / DD.eps, worst_mul / DD.eps


def condition_estimate(k, F, steps=4):
    """Largest singular value times the growth of ``K^{-1}`` under inverse iteration."""
    smax = svds(k.to_scipy(), k=1, v0=np.ones(k.nrows), return_singular_vectors=False)[0]
    v = DDArray(np.random.default_rng(0).standard_normal(k.nrows))
    for _ in range(steps):
        w = hybrid_solve(F, v).x
        growth = float(norm(w)) / float(norm(v))
        v = w * (1.0 / float(norm(w)))
    return smax * growth


def criterion_6():
    """Double-double arithmetic and the extended-pair solve on a kappa ~ 1e18 matrix."""
    t0 = time.perf_counter()
    add, mul = dd_oracle_worst()
    k, _ = fibonacci_pairs(600, 3, 44)
    xs = mod11_solution(k.nrows)
    kdd = as_double_double(k)
    b = spmv(kdd, asarray(xs, DD))
    F = hybrid_factor(kdd, pair=DDP)
    kappa = condition_estimate(k, F)
    res_mixed = maxrel(kdd, hybrid_solve(F, b).x, b)
    bd = spmv(k, xs)
    res_double = maxrel(k, hybrid_solve(direct_factor(k, D), bd).x, bd)
    dt = time.perf_counter() - t0
    ok = (add <= 8 and mul <= 8 and res_mixed <= 1e-25 and 1e-18 <= res_double <= 1e-13
          and 1e17 <= kappa <= 1e20
          and dt < 120)
    return ok, (f"add {add:.2f} eps mul {mul:.2f} eps; kappa ~ {kappa:.1e}; "
                f"mixed residual {res_mixed:.1e} pure double {res_double:.1e}"), dt, 120


def criterion_7():
    """Lower-precision reconstruction bound and repeatable pivot logs."""
    t0 = time.perf_counter()
    worst, same = 0.0, True
    for seed in range(30):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 101))
        k, forced = forced_postponing_instance(n, int(rng.integers(0, 4)), seed=seed)
        ks, _ = scale_symmetric(k)
        _, tree = build_bisection_tree(ks, int(rng.integers(1, 3)))
        F, part = factor_with_postponing(ks, tree, 0.05, 4, S, force_postpone=forced)
        G, _ = factor_with_postponing(ks, tree, 0.05, 4, S, force_postpone=forced)
        same &= F.pivot_log == G.pivot_log
        A = ks.toarray()
        l1 = part.lambda1
        K11 = A[np.ix_(l1, l1)]
        L, d, U = F.dense_factors()
        R = L.astype(np.float64) @ np.diag(d.astype(np.float64)) @ U.astype(np.float64)
        bound = 50 * part.N * S.eps * np.abs(K11).max()
        worst = max(worst, np.abs(R - K11).max() / bound)
    dt = time.perf_counter() - t0
    return worst <= 1.0 and same and dt < 10, f"error/bound {worst:.2e} logs identical {same}", dt, 10


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7]


def evaluate(i):
    fn = CRITERIA[i - 1]
    try:
        ok, detail, dt, limit = fn()
    except Skip as why:
        print(f"CRITERION {i}: SKIP  {why}", flush=True)
        return None
    print(f"CRITERION {i}: {'PASS' if ok else 'FAIL'}  {detail}  ({dt:.1f} s, limit {limit} s)",
          flush=True)
    return ok


@pytest.mark.parametrize("i", range(1, len(CRITERIA) + 1))
def test_criterion(i, capsys):
    with capsys.disabled():
        print()
        ok = evaluate(i)
    if ok is None:
        pytest.skip("input matrix not available")
    assert ok


if __name__ == "__main__":
    results = [evaluate(i) for i in range(1, len(CRITERIA) + 1)]
    sys.exit(0 if all(r is not False for r in results) else 1)
