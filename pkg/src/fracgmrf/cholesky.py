"""Sparse Cholesky factorization for symmetric positive definite matrices.

The matrix is permuted with a reverse Cuthill-McKee ordering and factorized
in LAPACK banded storage.  Orderings are cached per sparsity pattern so
repeated factorizations with the same structure (e.g. during parameter
fitting) skip the ordering step.
"""
import hashlib
import threading

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

__all__ = ["NotPositiveDefiniteError", "SparseCholesky", "fill_reducing_order"]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization breaks down."""


_order_cache = {}
_order_lock = threading.Lock()


def _pattern_key(A):
    h = hashlib.sha1()
    h.update(np.asarray(A.shape, dtype=np.int64).tobytes())
    h.update(A.indptr.astype(np.int64).tobytes())
    h.update(A.indices.astype(np.int64).tobytes())
    return h.hexdigest()


def fill_reducing_order(A):
    """Bandwidth-reducing permutation of a symmetric sparse matrix (cached)."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    key = _pattern_key(A)
    with _order_lock:
        perm = _order_cache.get(key)
    if perm is None:
        perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.int64)
        with _order_lock:
            if len(_order_cache) > 256:
                _order_cache.clear()
            _order_cache[key] = perm
    return perm


class SparseCholesky:
    """Factorization ``P Q P^T = U^T U`` with ``U`` upper triangular banded.

    Parameters
    ----------
    Q : sparse matrix
        Symmetric positive definite matrix. Only the upper triangle of the
        permuted matrix is read.
    perm : array_like, optional
        Precomputed permutation; computed with :func:`fill_reducing_order`
        when omitted.
    """

    def __init__(self, Q, perm=None):
        Q = sp.csr_matrix(Q)
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValueError("matrix must be square")
        self.n = n
        self.perm = np.asarray(fill_reducing_order(Q) if perm is None else perm)
        Qp = Q[self.perm][:, self.perm].tocoo()
        upper = Qp.row <= Qp.col
        rows, cols, vals = Qp.row[upper], Qp.col[upper], Qp.data[upper]
        kd = int((cols - rows).max()) if len(rows) else 0
        ab = np.zeros((kd + 1, n))
        ab[kd + rows - cols, cols] = vals
        c, info = lapack.dpbtrf(ab, lower=0)
        if info != 0:
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite (leading minor {info} failed)")
        self.kd = kd
        self._cb = c

    def logdet(self):
        """log-determinant of Q."""
        return 2.0 * np.sum(np.log(self._cb[self.kd]))

    def _as2d(self, b):
        b = np.asarray(b, dtype=float)
        return (b[:, None] if b.ndim == 1 else b), b.ndim == 1

    def solve(self, b):
        """Solve ``Q x = b`` (vector or matrix right-hand side)."""
        b2, vec = self._as2d(b)
        y, info = lapack.dpbtrs(self._cb, b2[self.perm])
        if info != 0:
            raise np.linalg.LinAlgError("banded solve failed")
        x = np.empty_like(y)
        x[self.perm] = y
        return x[:, 0] if vec else x

    def solve_factor(self, z):
        """Return ``P^T U^{-1} z``; maps iid N(0, 1) draws to N(0, Q^{-1})."""
        z2, vec = self._as2d(z)
        y, info = lapack.dtbtrs(self._cb, z2, uplo="U", trans="N")
        if info != 0:
            raise np.linalg.LinAlgError("triangular banded solve failed")
        x = np.empty_like(y)
        x[self.perm] = y
        return x[:, 0] if vec else x

    def solve_factor_t(self, b):
        """Return ``U^{-T} P b``, so that ``||result||^2 = b^T Q^{-1} b``."""
        b2, vec = self._as2d(b)
        y, info = lapack.dtbtrs(self._cb, b2[self.perm], uplo="U", trans="T")
        if info != 0:
            raise np.linalg.LinAlgError("triangular banded solve failed")
        return y[:, 0] if vec else y

    def inverse_dense(self):
        return self.solve(np.eye(self.n))
