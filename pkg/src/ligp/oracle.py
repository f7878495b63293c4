"""Dense n x n reference computations for the local inducing-point model.

These build the full replicated covariance explicitly and use generic dense
linear algebra.  They exist to check the Woodbury route and are only usable
for small instances.
"""

import numpy as np

from ligp.kernel import cross_matrix


def expand(Xbar, A, Yreps=None):
    """Replicate-block expansion of unique inputs (and per-site replicate lists)."""
    X = np.repeat(Xbar, A, axis=0)
    if Yreps is None:
        return X
    return X, np.concatenate([np.asarray(y, dtype=float) for y in Yreps])


def dense_sigma(X, Psi, theta, g, eps_K):
    """Sigma_n / tau2 = k K^{-1} k^T + Diag(K_n - k K^{-1} k^T) + g I."""
    k = cross_matrix(X, Psi, theta)
    Km = cross_matrix(Psi, Psi, theta) + eps_K * np.eye(Psi.shape[0])
    nys = k @ np.linalg.solve(Km, k.T)
    return nys + np.diag(1.0 - np.diag(nys) + g)


def dense_logdet(X, Psi, theta, g, tau2, eps_K):
    R = dense_sigma(X, Psi, theta, g, eps_K)
    sign, ld = np.linalg.slogdet(tau2 * R)
    return ld if sign > 0 else np.nan


def dense_quad(X, Y, Psi, theta, g, eps_K):
    R = dense_sigma(X, Psi, theta, g, eps_K)
    return float(Y @ np.linalg.solve(R, Y))


def dense_neg2loglik(X, Y, Psi, theta, g, tau2, eps_K):
    """-2 log N(Y; 0, tau2 R) without the n log(2 pi) constant."""
    R = dense_sigma(X, Psi, theta, g, eps_K)
    sign, ld = np.linalg.slogdet(tau2 * R)
    return ld + float(Y @ np.linalg.solve(tau2 * R, Y))


def dense_concentrated(X, Y, Psi, theta, g, eps_K):
    """n log(Y^T R^{-1} Y) + log|R|."""
    R = dense_sigma(X, Psi, theta, g, eps_K)
    _, ld = np.linalg.slogdet(R)
    return Y.size * np.log(float(Y @ np.linalg.solve(R, Y))) + ld


def dense_predict(X, Y, Psi, theta, g, eps_K, xprime):
    """Predictive moments by explicit conditioning on all n observations."""
    R = dense_sigma(X, Psi, theta, g, eps_K)
    tau2 = float(Y @ np.linalg.solve(R, Y)) / Y.size
    Km = cross_matrix(Psi, Psi, theta) + eps_K * np.eye(Psi.shape[0])
    kx = cross_matrix(np.atleast_2d(xprime), Psi, theta)[0]
    k = cross_matrix(X, Psi, theta)
    cov = k @ np.linalg.solve(Km, kx)
    w = np.linalg.solve(R, cov)
    mu = float(w @ Y)
    s2 = tau2 * (1.0 + g - float(cov @ w))
    return mu, s2
