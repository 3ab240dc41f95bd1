"""Threshold postponing on a small grid problem.

A weighted grid operator is factorized in single precision.  Pivots whose
ratio to the previous pivot drops below tau are set aside; the factorized
part then works as a preconditioner.

    python demos/01_postponing.py
"""
import numpy as np

from mixedldu.fixtures import diffusion_contrast
from mixedldu.lowfactor import factor_with_postponing, precond_solve
from mixedldu.ordering import build_bisection_tree
from mixedldu.sparsemat import scale_symmetric

K = diffusion_contrast(30, 30, contrast=1e5, seed=4, shift=1e-7)
Ks, scaling = scale_symmetric(K)
perm, tree = build_bisection_tree(Ks, 3)
print(f"matrix n={K.nrows}, nnz={K.nnz}, tree levels={tree.levels}")

for tau in (0.01, 0.05, 0.2, 0.5):
    F, part = factor_with_postponing(Ks, tree, tau=tau, n_extra=4)
    print(f"tau={tau:<5} postponed M={part.M:3d}  factorized N={part.N}")

F, part = factor_with_postponing(Ks, tree, tau=0.05, n_extra=4)
l1 = part.moderate
A11 = Ks.toarray()[np.ix_(l1, l1)]
b = np.random.default_rng(0).standard_normal(len(l1))
e = precond_solve(F, b)
print(f"one single-precision solve on K11: relative residual "
      f"{np.linalg.norm(b - A11 @ e) / np.linalg.norm(b):.2e}")
