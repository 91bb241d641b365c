"""Least squares and smallest singular values for small dense matrices."""

from __future__ import annotations

import numpy as np
import scipy.linalg


class RankDeficientError(np.linalg.LinAlgError):
    pass


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"expected a nonempty matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def min_singular_value(A) -> float:
    """Smallest singular value, i.e. sqrt of the smallest eigenvalue of A^T A.

    Wide matrices (fewer rows than columns) have a nontrivial kernel and
    return 0.
    """
    A = _as_matrix(A)
    m, p = A.shape
    if m < p:
        return 0.0
    s = scipy.linalg.svd(A, compute_uv=False, lapack_driver="gesvd", check_finite=False)
    return float(s[-1])


def lstsq(A, b, rcond: float = 1e-13) -> np.ndarray:
    """Minimizer of ||Ax - b||_2 via Householder QR.

    Raises ``RankDeficientError`` when R has a diagonal entry below
    ``rcond * max|diag R|``; no regularization is applied.
    """
    A = _as_matrix(A)
    b = np.asarray(b, dtype=float)
    m, p = A.shape
    if b.shape[0] != m:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix has {m}")
    if m < p:
        raise ValueError(f"underdetermined system: {m} rows < {p} columns")
    Q, R = scipy.linalg.qr(A, mode="economic", check_finite=False)
    diag = np.abs(np.diag(R))
    if diag.min() <= rcond * max(diag.max(), np.finfo(float).tiny):
        raise RankDeficientError("least squares matrix is numerically rank deficient")
    return scipy.linalg.solve_triangular(R, Q.T @ b, check_finite=False)
