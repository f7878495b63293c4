"""Isotropic Gaussian kernel and jittered Cholesky factorization."""

from dataclasses import dataclass

import numpy as np

from ligp.errors import InputError, NumericalError


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal jitter added before factorizing ``K_m`` and ``Q_m``.

    On a failed factorization the jitter is multiplied by ``growth_factor``,
    at most ``max_attempts`` times in total.
    """

    eps_K: float = 1e-8
    eps_Q: float = 1e-5
    growth_factor: float = 10.0
    max_attempts: int = 4

    def __post_init__(self):
        if not (self.eps_K > 0 and self.eps_Q > 0):
            raise InputError("jitter values must be positive")
        if not self.growth_factor > 1:
            raise InputError("growth_factor must exceed 1")
        if self.max_attempts < 1:
            raise InputError("max_attempts must be >= 1")

    def start(self, which):
        if which == "K":
            return self.eps_K
        if which == "Q":
            return self.eps_Q
        raise InputError(f"unknown matrix kind {which!r}")


def _check_theta(theta):
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
        raise InputError("lengthscale theta must be finite and positive")
    return theta


def kernel(x_i, x_j, theta):
    """exp(-||x_i - x_j||^2 / theta)."""
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    if x_i.shape != x_j.shape or x_i.ndim != 1:
        raise InputError(f"dimension mismatch: {x_i.shape} vs {x_j.shape}")
    theta = float(_check_theta(theta))
    d = x_i - x_j
    return float(np.exp(-np.dot(d, d) / theta))


def sqdist(A, B):
    """Squared Euclidean distances between rows, broadcasting leading axes.

    ``A`` is (..., p, d) and ``B`` is (..., q, d); returns (..., p, q).
    Computed from explicit differences so that identical rows give exactly 0.
    """
    diff = A[..., :, None, :] - B[..., None, :, :]
    return np.einsum("...ijk,...ijk->...ij", diff, diff)


def cross_matrix(A, B, theta):
    """Kernel matrix between the rows of ``A`` (p x d) and ``B`` (q x d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[-1] != B.shape[-1]:
        raise InputError(f"dimension mismatch: {A.shape[-1]} vs {B.shape[-1]}")
    theta = _check_theta(theta)
    return np.exp(-sqdist(A, B) / theta)


def stable_factor(M, policy=JitterPolicy(), which="K"):
    """Cholesky factor of ``M + eps*I`` with escalating jitter.

    Returns ``(L, eps)`` where ``eps`` is the jitter actually used.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError("matrix contains non-finite entries")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise InputError("matrix is not symmetric")
    eps = policy.start(which)
    eye = np.eye(M.shape[0])
    for _ in range(policy.max_attempts):
        try:
            return np.linalg.cholesky(M + eps * eye), eps
        except np.linalg.LinAlgError:
            eps *= policy.growth_factor
    eps /= policy.growth_factor
    try:
        cond = float(np.linalg.cond(M))
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise NumericalError(
        f"{which} matrix not positive definite after {policy.max_attempts} jitter attempts",
        {"last_jitter": eps, "condition_number": cond, "size": M.shape[0]},
    )


def batch_factor(M, policy=JitterPolicy(), which="K"):
    """Stacked version of :func:`stable_factor` for ``M`` of shape (B, p, p).

    Never raises on individual failures; returns ``(L, eps, ok)`` where rows
    with ``ok == False`` hold NaN factors.
    """
    B, p, _ = M.shape
    eps0 = policy.start(which)
    eye = np.eye(p)
    eps = np.full(B, eps0)
    finite = np.all(np.isfinite(M), axis=(1, 2))
    if finite.all():
        try:
            return np.linalg.cholesky(M + eps0 * eye), eps, np.ones(B, dtype=bool)
        except np.linalg.LinAlgError:
            pass
    L = np.full_like(M, np.nan)
    ok = np.zeros(B, dtype=bool)
    for b in np.flatnonzero(finite):
        e = eps0
        for _ in range(policy.max_attempts):
            try:
                L[b] = np.linalg.cholesky(M[b] + e * eye)
                ok[b] = True
                break
            except np.linalg.LinAlgError:
                e *= policy.growth_factor
        eps[b] = e
    return L, eps, ok


def chol_logdet(L):
    """log-determinant from (stacked) Cholesky factors."""
    return 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)


def chol_solve(L, B):
    """Solve (L L^T) X = B for stacked lower-triangular ``L``."""
    # np.linalg.solve on triangular factors; scipy's cho_solve lacks batching.
    Y = np.linalg.solve(L, B)
    return np.linalg.solve(np.swapaxes(L, -1, -2), Y)


def chol_inverse(L):
    """(L L^T)^{-1} from stacked lower-triangular factors."""
    Li = np.linalg.inv(L)
    return np.swapaxes(Li, -1, -2) @ Li
