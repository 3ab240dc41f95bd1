import numpy as np
import pytest

from mixedldu.sparsemat import SparseMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def dense_schur(A, l1, l2):
    """K22 - K21 K11^{-1} K12 by dense elimination in double."""
    return A[np.ix_(l2, l2)] - A[np.ix_(l2, l1)] @ np.linalg.solve(A[np.ix_(l1, l1)],
                                                                 A[np.ix_(l1, l2)])


def scaled_dense(K: SparseMatrix, q):
    A = K.toarray()
    return A * q[:, None] * q[None, :]
