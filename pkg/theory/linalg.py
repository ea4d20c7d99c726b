"""
Closed-form linear algebra for single row vectors, plus the truncated-SVD
projection used when an increment has to fit a smaller rank budget.
"""
from dataclasses import dataclass

import numpy as np

from numeric.exceptions import DegenerateInputError, DimensionError


def default_tol(d):
    return 1e-10 * np.sqrt(d)


def _as_vector(x, name='x'):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f'{name} must be a vector, got shape {x.shape}')
    return x


def row_pseudoinverse(x, tol=None):
    """Moore-Penrose pseudoinverse of the row x^T, returned as the column x / |x|^2.

    The conversion it serves only holds for x != 0, so a norm at or below
    ``tol`` (default 1e-10 * sqrt(d)) is rejected.
    """
    x = _as_vector(x)
    tol = default_tol(x.size) if tol is None else tol
    norm = np.linalg.norm(x)
    if norm <= tol:
        raise DegenerateInputError(
            f'|x| = {norm:.3e} <= tol {tol:.3e}: the pseudoinverse construction requires x != 0')
    return x / norm ** 2


@dataclass
class RowSvd:
    """r = u @ diag(sigma) @ v_r.T for a single row r of length k."""
    u: np.ndarray
    sigma: np.ndarray
    v_r: np.ndarray

    def reconstruct(self):
        return (self.u @ np.diag(self.sigma) @ self.v_r.T).ravel()

    @property
    def norm(self):
        return float(self.sigma[0])


def complete_basis(direction):
    """Orthonormal k x k matrix whose first column is ``direction`` (unit norm).

    Gram-Schmidt over the standard basis, skipping vectors that fall in the span
    already built.
    """
    k = direction.size
    basis = [direction]
    for i in range(k):
        if len(basis) == k:
            break
        candidate = np.zeros(k)
        candidate[i] = 1.0
        for b in basis:
            candidate -= (b @ candidate) * b
        norm = np.linalg.norm(candidate)
        if norm > 1e-8:
            basis.append(candidate / norm)
    return np.stack(basis, axis=1)


def row_svd(r):
    """Thin SVD of a row vector in closed form: one singular value |r|."""
    r = _as_vector(r, 'r')
    k = r.size
    norm = np.linalg.norm(r)
    direction = r / norm if norm > 0 else np.eye(k)[0]
    u = np.zeros((1, k))
    u[0, 0] = 1.0
    sigma = np.zeros(k)
    sigma[0] = norm
    return RowSvd(u=u, sigma=sigma, v_r=complete_basis(direction))


def project_to_rank(matrix, rank):
    """Best rank-``rank`` approximation of ``matrix`` in Frobenius norm."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(f'project_to_rank needs a matrix, got shape {matrix.shape}')
    if rank < 0:
        raise DimensionError(f'rank must be >= 0, got {rank}')
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    rank = min(rank, s.size)
    return (u[:, :rank] * s[:rank]) @ vt[:rank]


def numerical_rank(matrix, rel_tol=1e-10):
    s = np.linalg.svd(np.atleast_2d(matrix), compute_uv=False)
    if not s.size or s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def tail_ratio(matrix, rank):
    """sigma_{rank+1} / sigma_1, zero when there is no such singular value."""
    s = np.linalg.svd(np.atleast_2d(matrix), compute_uv=False)
    if s.size <= rank or s[0] == 0:
        return 0.0
    return float(s[rank] / s[0])


def rel_err(actual, expected):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if actual.shape != expected.shape:
        raise DimensionError(f'cannot compare shapes {actual.shape} and {expected.shape}')
    denom = np.linalg.norm(expected)
    diff = np.linalg.norm(actual - expected)
    if denom == 0.0:
        return float(diff)
    return float(diff / denom)
