"""Mixed double/double-double solve of a matrix with condition near 1e18.

Embedded Fibonacci blocks make the matrix nearly singular while every entry
stays an exact integer.  A pure double factorization loses all accuracy;
factorizing in double and building the Schur complement in double-double
recovers a residual near 1e-32.

    python demos/04_double_double.py
"""
import numpy as np

from mixedldu.fixtures import as_double_double, fibonacci_pairs, mod11_solution
from mixedldu.hybrid import direct_factor, hybrid_factor, hybrid_solve
from mixedldu.precision import PrecisionPair, ScalarKind, asarray, to_float64
from mixedldu.sparsemat import spmv

K, _ = fibonacci_pairs(600, 3, 44)
xs = mod11_solution(K.nrows)


def report(label, k, F, kind):
    x_star = asarray(xs, kind)
    b = spmv(k, x_star)
    x = hybrid_solve(F, b).x
    res = np.abs(to_float64(b - spmv(k, x))).max() / np.abs(to_float64(b)).max()
    err = np.abs(to_float64(x - x_star)).max() / np.abs(xs).max()
    print(f"{label:22s} M={F.M:2d} kernel={F.kernel_dim}  residual {res:.2e}  error {err:.2e}")


report("pure double", K, direct_factor(K, ScalarKind.DOUBLE), ScalarKind.DOUBLE)
Kdd = as_double_double(K)
report("mixed double + dd", Kdd, hybrid_factor(Kdd, pair=PrecisionPair.DOUBLE_DD),
       ScalarKind.DOUBLEDOUBLE)
