"""Dense (global) Gaussian process on unique inputs with replicates.

The model is ``Y_n ~ N(0, tau2 * (U K U^T + g I_n))`` evaluated through the
unique-input identities, so only ``nbar x nbar`` matrices are formed:

    Y^T R^{-1} Y = (sum S - Ybar^T A Ybar) / g + Ybar^T C^{-1} Ybar
    log|R|       = log|C| + sum log a_i + (n - nbar) log g

with ``C = K + g A^{-1}``.  Lengthscales may be one value (isotropic) or one
per input dimension (separable).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from ligp.errors import FittingError, InputError

EPS = 1e-8


def _sep_sqdist(X1, X2):
    # (d, p, q) per-dimension squared differences
    return (X1.T[:, :, None] - X2.T[:, None, :]) ** 2


def _kernel_sep(D, theta):
    return np.exp(-np.tensordot(1.0 / theta, D, axes=1))


def nll_and_grad(logpar, D, Ybar, A, S, n_theta):
    """Concentrated -2 log-likelihood (up to a constant) and its gradient.

    ``logpar`` holds ``log(theta)`` (``n_theta`` values) followed by ``log(g)``.
    """
    theta = np.exp(logpar[:n_theta])
    g = np.exp(logpar[n_theta])
    nbar = Ybar.size
    n = A.sum()
    if n_theta == 1:
        Dsum = D.sum(axis=0)
        K = np.exp(-Dsum / theta[0])
        dK = [K * Dsum / theta[0]]  # d/dlog(theta)
    else:
        K = _kernel_sep(D, theta)
        dK = [K * D[k] / theta[k] for k in range(n_theta)]
    C = K + np.diag(g / A + EPS)
    try:
        cf = cho_factor(C, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros_like(logpar)
    alpha = cho_solve(cf, Ybar)
    resid = S.sum() - np.dot(A * Ybar, Ybar)
    resid = max(resid, 0.0)
    quad = resid / g + np.dot(Ybar, alpha)
    if quad <= 0:
        return np.inf, np.zeros_like(logpar)
    logdet = 2.0 * np.log(np.diag(cf[0])).sum() + (n - nbar) * np.log(g)
    f = n * np.log(quad) + logdet

    Ci = cho_solve(cf, np.eye(nbar))
    grad = np.empty_like(logpar)
    for k in range(n_theta):
        dq = -alpha @ dK[k] @ alpha
        grad[k] = n * dq / quad + np.sum(Ci * dK[k])
    dq_g = -resid / g**2 - np.dot(alpha / A, alpha)
    dl_g = np.sum(np.diag(Ci) / A) + (n - nbar) / g
    grad[n_theta] = g * (n * dq_g / quad + dl_g)
    return f, grad


@dataclass
class DenseGP:
    """A fitted dense GP; ``theta`` is a scalar or per-dimension array."""

    X: np.ndarray
    Ybar: np.ndarray
    A: np.ndarray
    theta: np.ndarray
    g: float
    tau2: float
    nll: float
    _cf: tuple = None
    _alpha: np.ndarray = None

    def _prep(self):
        if self._cf is None:
            K = self.kernel(self.X, self.X)
            self._cf = cho_factor(K + np.diag(self.g / self.A + EPS), lower=True)
            self._alpha = cho_solve(self._cf, self.Ybar)

    def kernel(self, X1, X2):
        D = _sep_sqdist(X1, X2)
        theta = np.atleast_1d(self.theta)
        if theta.size == 1:
            return np.exp(-D.sum(axis=0) / theta[0])
        return _kernel_sep(D, theta)

    def predict(self, Xnew):
        """Predictive mean and variance of a new (noisy) observation."""
        self._prep()
        Xnew = np.atleast_2d(Xnew)
        k = self.kernel(Xnew, self.X)
        mu = k @ self._alpha
        v = cho_solve(self._cf, k.T)
        s2 = self.tau2 * (1.0 + self.g - np.einsum("ij,ji->i", k, v))
        return mu, np.maximum(s2, 1e-300)


def fit_dense_gp(X, Ybar, A=None, S=None, separable=False, theta0=None, g0=0.1,
                 theta_bounds=None, g_bounds=(1e-6, 10.0)):
    """Maximum-likelihood fit of a dense GP by L-BFGS-B on log parameters.

    With ``A`` and ``S`` omitted, each row is treated as a single observation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Ybar = np.asarray(Ybar, dtype=float)
    nbar, d = X.shape
    if A is None:
        A = np.ones(nbar)
    A = np.asarray(A, dtype=float)
    if S is None:
        S = A * Ybar**2
    S = np.asarray(S, dtype=float)
    if Ybar.shape != (nbar,) or A.shape != (nbar,) or S.shape != (nbar,):
        raise InputError("X, Ybar, A, S are not aligned")
    if nbar < 2 or np.ptp(X, axis=0).max() == 0:
        raise FittingError("degenerate design: fewer than two distinct inputs")
    if np.all(S - A * Ybar**2 <= 0) and np.ptp(Ybar) == 0:
        raise FittingError("constant response cannot identify lengthscales")

    D = _sep_sqdist(X, X)
    n_theta = d if separable else 1
    span = np.ptp(X, axis=0) ** 2 if separable else np.array([np.sum(np.ptp(X, axis=0) ** 2)])
    span = np.where(span > 0, span, 1.0)
    if theta_bounds is None:
        lo, hi = 1e-4 * span, 1e2 * span
    else:
        lo = np.full(n_theta, theta_bounds[0])
        hi = np.full(n_theta, theta_bounds[1])
    if theta0 is None:
        theta0 = 0.1 * span
    theta0 = np.clip(np.broadcast_to(np.asarray(theta0, dtype=float), (n_theta,)), lo, hi)
    x0 = np.concatenate([np.log(theta0), [np.log(np.clip(g0, *g_bounds))]])
    bounds = list(zip(np.log(lo), np.log(hi))) + [tuple(np.log(g_bounds))]
    res = minimize(nll_and_grad, x0, args=(D, Ybar, A, S, n_theta), jac=True,
                   method="L-BFGS-B", bounds=bounds)
    if not np.isfinite(res.fun):
        raise FittingError("dense GP likelihood could not be evaluated")
    theta = np.exp(res.x[:n_theta])
    g = float(np.exp(res.x[n_theta]))
    n = A.sum()
    # tau2 MLE at the optimum: quad / n
    gp = DenseGP(X, Ybar, A, theta if separable else theta[:1], g, 1.0, float(res.fun))
    gp._prep()
    resid = max(S.sum() - np.dot(A * Ybar, Ybar), 0.0)
    gp.tau2 = float((resid / g + np.dot(Ybar, gp._alpha)) / n)
    return gp
