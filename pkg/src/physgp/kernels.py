"""Squared-exponential kernel and symmetric positive-definite linear algebra.

Everything here is a pure function of its inputs; the GP, JGP, LFM and
emulator modules build on these primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

DEFAULT_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be Cholesky-factorized even with jitter.

    Attributes
    ----------
    pivot : int
        Smallest (0-based) pivot index at which the last attempt failed.
    """

    def __init__(self, message, pivot):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class SEKernel:
    """Isotropic squared-exponential kernel.

    ``k(x, x') = signal_variance * exp(-|x - x'|^2 / (2 lengthscale^2))``
    """

    lengthscale: float
    signal_variance: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError(
                f"signal_variance must be positive, got {self.signal_variance}"
            )

    def __call__(self, X1, X2=None):
        return cross_cov(self, X1, X2)


@dataclass(frozen=True)
class SPDFactorization:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    ``jitter`` is the absolute value that had to be added to the diagonal
    (0.0 when the matrix factorized as given).
    """

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def _as_vector(x, name):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {x.shape}")
    return x


def _as_points(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be an (n, d) matrix, got shape {X.shape}")
    return X


def se_eval(kernel: SEKernel, x, x_prime) -> float:
    """Covariance between two single points."""
    x = _as_vector(x, "x")
    x_prime = _as_vector(x_prime, "x_prime")
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x_prime.shape[0]}")
    diff = x - x_prime
    r2 = float(diff @ diff)
    return kernel.signal_variance * float(np.exp(-0.5 * r2 / kernel.lengthscale**2))


def se_gradient(kernel: SEKernel, y, y_prime) -> np.ndarray:
    """Gradient of ``k(y, y')`` with respect to its first argument.

    Equals ``-k(y, y') / lengthscale**2 * (y - y')``.
    """
    y = _as_vector(y, "y")
    y_prime = _as_vector(y_prime, "y_prime")
    if y.shape != y_prime.shape:
        raise ValueError(f"dimension mismatch: {y.shape[0]} vs {y_prime.shape[0]}")
    k = se_eval(kernel, y, y_prime)
    return -(k / kernel.lengthscale**2) * (y - y_prime)


def sq_dist(X1, X2) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows."""
    X1 = _as_points(X1, "X1")
    X2 = _as_points(X2, "X2")
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    diff = X1[:, None, :] - X2[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cross_cov(kernel: SEKernel, X1, X2=None) -> np.ndarray:
    """Kernel matrix between the rows of ``X1`` and ``X2`` (``X1`` if omitted)."""
    X1 = _as_points(X1, "X1")
    X2 = X1 if X2 is None else _as_points(X2, "X2")
    D2 = sq_dist(X1, X2)
    return kernel.signal_variance * np.exp(-0.5 * D2 / kernel.lengthscale**2)


def cross_cov_gradient(kernel: SEKernel, Y, nodes) -> np.ndarray:
    """Gradients of ``k(y, node_j)`` w.r.t. ``y`` for every query row.

    Returns an array of shape ``(m, n, d)``.
    """
    Y = _as_points(Y, "Y")
    nodes = _as_points(nodes, "nodes")
    diff = Y[:, None, :] - nodes[None, :, :]
    K = cross_cov(kernel, Y, nodes)
    return -(K / kernel.lengthscale**2)[:, :, None] * diff


def gram(kernel: SEKernel, X, noise_variance: float = 0.0) -> np.ndarray:
    """Kernel matrix of ``X`` with ``noise_variance`` added to the diagonal."""
    if noise_variance < 0:
        raise ValueError("noise_variance must be non-negative")
    X = _as_points(X)
    if X.shape[0] < 1:
        raise ValueError("gram needs at least one point")
    K = cross_cov(kernel, X)
    K[np.diag_indices_from(K)] += noise_variance
    return K


def _first_failing_pivot(M, tol=0.0):
    """Index of the first pivot <= ``tol`` in an unpivoted LDL^T sweep."""
    n = M.shape[0]
    A = np.array(M, dtype=float)
    for j in range(n):
        if not A[j, j] > tol:
            return j
        col = A[j + 1 :, j] / A[j, j]
        A[j + 1 :, j + 1 :] -= np.outer(col, A[j, j + 1 :])
    return n - 1


def factorize(M, jitter_schedule=DEFAULT_JITTERS) -> SPDFactorization:
    """Cholesky-factorize ``M``, escalating diagonal jitter on failure.

    Each entry of ``jitter_schedule`` is relative to the mean diagonal of
    ``M``. The first entry that succeeds is recorded on the result.

    Raises
    ------
    NotPositiveDefiniteError
        If every jitter level fails.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = float(np.mean(np.diag(M))) if M.size else 1.0
    if not scale > 0:
        scale = 1.0
    n = M.shape[0]
    # pivots below rounding level mean the matrix is numerically singular
    min_pivot = n * np.finfo(float).eps * scale
    last = None
    for rel in jitter_schedule:
        jitter = float(rel) * scale
        A = M + jitter * np.eye(n) if jitter else M
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            last = A
            continue
        if np.all(np.isfinite(L)) and np.min(np.diag(L)) ** 2 > min_pivot:
            return SPDFactorization(L, jitter)
        last = A
    pivot = _first_failing_pivot(last, min_pivot) if last is not None else 0
    raise NotPositiveDefiniteError(
        f"matrix of size {n} is not positive definite (pivot {pivot}) "
        f"after jitters {list(jitter_schedule)}",
        pivot,
    )


def solve(F: SPDFactorization, B) -> np.ndarray:
    """Solve ``M X = B`` given the factorization of ``M``."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != F.dimension:
        raise ValueError(
            f"dimension mismatch: factor is {F.dimension}, rhs has {B.shape[0]} rows"
        )
    Z = solve_triangular(F.lower, B, lower=True, check_finite=False)
    return solve_triangular(F.lower.T, Z, lower=False, check_finite=False)


def inverse(F: SPDFactorization) -> np.ndarray:
    """Explicit inverse of the factorized matrix."""
    return solve(F, np.eye(F.dimension))
