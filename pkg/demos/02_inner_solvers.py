"""Iterative refinement, GCR and block GCR with a single-precision preconditioner.

Sixteen right-hand sides on a high-contrast diffusion operator.  Residual
histories are written as CSV files for plotting.

    python demos/02_inner_solvers.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from mixedldu.fixtures import diffusion_contrast
from mixedldu.krylov import SolverConfig, solve
from mixedldu.lowfactor import factor_with_postponing
from mixedldu.ordering import build_bisection_tree
from mixedldu.sparsemat import scale_symmetric, spmm

out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
K = diffusion_contrast(40, 50, contrast=1e6, seed=0, shift=2e-6)
Ks, _ = scale_symmetric(K)
_, tree = build_bisection_tree(Ks)
F, part = factor_with_postponing(Ks, tree, 0.05, 4)
A = Ks.submatrix(part.moderate, part.moderate)
B = spmm(A, np.random.default_rng(1).standard_normal((A.nrows, 16)))

for method in ("ir", "gcr", "bgcr"):
    X, h = solve(A, F, B, SolverConfig(method=method))
    path = out / f"history_{method}.csv"
    h.to_csv(path)
    worst = h.max_over_columns()
    print(f"{method:5s} iterations {h.niter:2d}  final max residual {worst[-1]:.2e}  -> {path}")
    print("      first column: " + " ".join(f"{r:.1e}" for r in h.column(0)))
