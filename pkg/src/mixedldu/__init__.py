"""Mixed-precision sparse direct solver.

A matrix is split into a moderate part, factorized in a lower precision and
used as a preconditioner, and a hard part whose Schur complement is built by a
block Krylov solver and factorized in a higher precision with kernel
detection.  Higher precision is double or double-double.
"""
from .precision import (DDArray, DoubleDouble, PrecisionPair, ScalarKind, dd_add, dd_mul,
                        lift, truncate)
from .sparsemat import (SparseMatrix, extract_blocks, read_matrix_market, scale_symmetric,
                        spmm, spmv, write_matrix_market)
from .ordering import BisectionTree, Permutation, build_bisection_tree
from .lowfactor import LowerFactor, PostponedPartition, factor_with_postponing, precond_solve
from .krylov import ConvergenceHistory, Method, SolverConfig, block_gcr, gcr, iterative_refinement
from .hybrid import (HybridFactorization, SchurFactor, direct_factor, factor_schur,
                     hybrid_factor, hybrid_solve, kernel_dimension)

__version__ = "0.1.0"

__all__ = [
    "DDArray", "DoubleDouble", "PrecisionPair", "ScalarKind", "dd_add", "dd_mul", "lift",
    "truncate", "SparseMatrix", "extract_blocks", "read_matrix_market", "scale_symmetric",
    "spmm", "spmv", "write_matrix_market", "BisectionTree", "Permutation",
    "build_bisection_tree", "LowerFactor", "PostponedPartition", "factor_with_postponing",
    "precond_solve", "ConvergenceHistory", "Method", "SolverConfig", "block_gcr", "gcr",
    "iterative_refinement", "HybridFactorization", "SchurFactor", "direct_factor",
    "factor_schur", "hybrid_factor", "hybrid_solve", "kernel_dimension",
]
