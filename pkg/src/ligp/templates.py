"""Inducing-point sets: greedy wIMSE designs, qNorm templates and transport.

The wIMSE criterion for a set ``Psi`` of inducing points, a neighborhood of
unique inputs ``Xn`` and a reference site ``x'`` is the kernel-weighted
integral of the normalized predictive variance over a box ``[a, b]``::

    wIMSE = (1 + g) * prod_k I_k - tr{(K^{-1} - Q^{-1}) W'}

where ``I_k = sqrt(theta pi)/2 * [erf((b_k - x'_k)/sqrt(theta)) - erf((a_k - x'_k)/sqrt(theta))]``
and ``W'_ij = int k(x, psi_i) k(x, psi_j) k(x, x') dx``.  The triple product
integral factorizes over dimensions; with ``s`` the mean of the three
coordinates and ``C`` the sum of their squared deviations from ``s``,

    int_a^b exp(-[(x-p)^2 + (x-q)^2 + (x-r)^2] / theta) dx
        = exp(-C/theta) sqrt(pi theta / 3) / 2
          * [erf((b - s) sqrt(3/theta)) - erf((a - s) sqrt(3/theta))].

Designs are built with unit weight per unique input, so they depend on the
neighborhood locations only and not on how many replicates each location has.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import erf, erfc
from scipy.stats import norm, qmc

from ligp.errors import InputError, NumericalError
from ligp.kernel import sqdist

_SQRT_PI = np.sqrt(np.pi)


@dataclass(frozen=True)
class InducingSet:
    """Inducing-point coordinates and the site they were built for."""

    Psi: np.ndarray
    anchor: np.ndarray
    fallback: bool = False
    criterion: tuple = field(default=(), compare=False)

    def __post_init__(self):
        Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        anchor = np.asarray(self.anchor, dtype=float).reshape(-1)
        if Psi.shape[0] < 1:
            raise InputError("an inducing set needs at least one point")
        if Psi.shape[1] != anchor.size:
            raise InputError("anchor and inducing points differ in dimension")
        if not np.all(np.isfinite(Psi)):
            raise InputError("inducing points must be finite")
        object.__setattr__(self, "Psi", Psi)
        object.__setattr__(self, "anchor", anchor)

    @property
    def m(self):
        return self.Psi.shape[0]


@dataclass(frozen=True)
class WimseConfig:
    """Settings for greedy wIMSE construction.

    ``bounds`` is a ``(2, d)`` array of box corners; ``None`` means the
    bounding box of the neighborhood inputs.  ``gradient`` is ``"fd"``
    (central differences) or ``"analytic"``.
    """

    bounds: np.ndarray = None
    multistart: int = 20
    tol: float = 0.01
    gradient: str = "fd"
    g: float = 1e-4
    eps_K: float = 1e-8
    fd_step: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.ndim != 2 or b.shape[0] != 2 or np.any(b[0] >= b[1]):
                raise InputError("bounds must be (2, d) with lower < upper")
            object.__setattr__(self, "bounds", b)
        if self.multistart < 1:
            raise InputError("multistart must be >= 1")
        if self.gradient not in ("fd", "analytic"):
            raise InputError(f"unknown gradient mode {self.gradient!r}")
        if not self.g >= 0:
            raise InputError("g must be non-negative")


def enclosing_box(Xn):
    """Bounding box of the rows of ``Xn``; zero-width sides are widened."""
    Xn = np.atleast_2d(Xn)
    lo, hi = Xn.min(axis=0), Xn.max(axis=0)
    width = hi - lo
    pad = np.where(width > 0, 0.0, 0.5 * (width.max() if width.max() > 0 else 1.0))
    return np.stack([lo - pad, hi + pad])


def _erf_diff(lo, hi):
    """erf(hi) - erf(lo) without cancellation in the tails (lo <= hi)."""
    pos = lo > 0
    neg = hi < 0
    out = erf(hi) - erf(lo)
    out = np.where(pos, erfc(lo) - erfc(hi), out)
    out = np.where(neg, erfc(-hi) - erfc(-lo), out)
    return out


def leading_term(xprime, theta, bounds):
    """prod_k sqrt(theta pi)/2 [erf((b_k - x'_k)/sqrt(theta)) - erf((a_k - x'_k)/sqrt(theta))]."""
    st = np.sqrt(theta)
    a, b = bounds
    return float(np.prod(0.5 * st * _SQRT_PI * _erf_diff((a - xprime) / st, (b - xprime) / st)))


def _triple_1d(p, q, r, theta, a, b):
    s = (p + q + r) / 3.0
    C = p * p + q * q + r * r - 3.0 * s * s
    c = np.sqrt(3.0 / theta)
    return (np.exp(-np.maximum(C, 0.0) / theta) * 0.5 * np.sqrt(np.pi * theta / 3.0)
            * _erf_diff((a - s) * c, (b - s) * c))


def triple_integrals(Psi, xprime, theta, bounds):
    """W'_ij = int_box k(x, psi_i) k(x, psi_j) k(x, x') dx for all pairs."""
    a, b = bounds
    P = Psi[:, None, :]
    Q = Psi[None, :, :]
    return np.prod(_triple_1d(P, Q, xprime, theta, a, b), axis=2)


def _triple_1d_dq(p, q, r, theta, a, b):
    # derivative of the per-dimension factor in its second argument
    s = (p + q + r) / 3.0
    C = p * p + q * q + r * r - 3.0 * s * s
    c = np.sqrt(3.0 / theta)
    e = np.exp(-np.maximum(C, 0.0) / theta)
    I = 0.5 * np.sqrt(np.pi * theta / 3.0) * _erf_diff((a - s) * c, (b - s) * c)
    dI = -(np.exp(-((b - s) * c) ** 2) - np.exp(-((a - s) * c) ** 2)) / 3.0
    return e * (-(2.0 * (q - s)) / theta * I + dI)


def _variance_parts(Xn, Psi, theta, g, eps_K):
    """Cholesky pieces of K_m and the unit-weight Q_m."""
    m = Psi.shape[0]
    K = np.exp(-sqdist(Psi, Psi) / theta) + eps_K * np.eye(m)
    k = np.exp(-sqdist(Xn, Psi) / theta)
    L = np.linalg.cholesky(K)
    Vt = solve_triangular(L, k.T, lower=True)            # L^{-1} k^T, (m, nbar)
    omega = 1.0 + g - np.sum(Vt * Vt, axis=0)
    if np.any(omega <= 0):
        raise NumericalError("non-positive diagonal correction in wIMSE", {})
    V = Vt / np.sqrt(omega)
    Bm = np.eye(m) + V @ V.T                              # L^{-1} Q L^{-T}
    return K, k, L, V, Bm, omega


def wimse_value(Xn, Psi, xprime, theta, g=1e-4, bounds=None, eps_K=1e-8):
    """wIMSE of the full inducing set ``Psi`` (lower is better)."""
    Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    xprime = np.asarray(xprime, dtype=float).reshape(-1)
    bounds = enclosing_box(Xn) if bounds is None else np.asarray(bounds, dtype=float)
    _, _, L, V, Bm, _ = _variance_parts(Xn, Psi, theta, g, eps_K)
    W = triple_integrals(Psi, xprime, theta, bounds)
    # K^{-1} - Q^{-1} = L^{-T} B^{-1} V V^T L^{-1}
    LW = solve_triangular(L, solve_triangular(L, W, lower=True).T, lower=True).T
    VV = V @ V.T
    tr = np.trace(cho_solve(cho_factor(Bm, lower=True), VV) @ LW)
    return (1.0 + g) * leading_term(xprime, theta, bounds) - tr


def normalized_variance(X, Xn, Psi, theta, g=1e-4, eps_K=1e-8):
    """sigma^2(x) / tau^2 under unit weights at rows of ``X``; for checks."""
    _, _, L, V, Bm, _ = _variance_parts(Xn, Psi, theta, g, eps_K)
    kx = np.exp(-sqdist(np.atleast_2d(X), Psi) / theta)
    Z = solve_triangular(L, kx.T, lower=True)
    Y = V.T @ Z
    inner = np.sum(Y * np.linalg.solve(np.eye(V.shape[1]) + V.T @ V, Y), axis=0)
    return 1.0 + g - inner


def wimse_criterion(Xn, psi_current, candidate, theta, g=1e-4, bounds=None, eps_K=1e-8):
    """wIMSE after appending ``candidate`` to ``psi_current``.

    ``psi_current`` is an :class:`InducingSet` whose anchor is the reference
    site ``x'``.  ``candidate`` must lie inside ``bounds``.
    """
    if not theta > 0:
        raise InputError("theta must be positive")
    bounds = enclosing_box(Xn) if bounds is None else np.asarray(bounds, dtype=float)
    c = np.asarray(candidate, dtype=float).reshape(-1)
    if np.any(c < bounds[0]) or np.any(c > bounds[1]):
        raise InputError("candidate lies outside the design box")
    Psi = np.vstack([psi_current.Psi, c])
    return wimse_value(Xn, Psi, psi_current.anchor, theta, g, bounds, eps_K)


def wimse_gradient(Xn, psi_current, candidate, theta, g=1e-4, bounds=None, eps_K=1e-8):
    """Analytic derivative of :func:`wimse_criterion` in the candidate coordinates."""
    Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
    bounds = enclosing_box(Xn) if bounds is None else np.asarray(bounds, dtype=float)
    a, b = bounds
    c = np.asarray(candidate, dtype=float).reshape(-1)
    Psi = np.vstack([psi_current.Psi, c])
    xp = psi_current.anchor
    M, d = Psi.shape
    j = M - 1
    K, k, L, V, Bm, omega = _variance_parts(Xn, Psi, theta, g, eps_K)
    Kinv = cho_solve((L, True), np.eye(M))
    lam = 1.0 / omega
    Q = K + k.T @ (lam[:, None] * k)
    Qinv = np.linalg.inv(Q)
    W = triple_integrals(Psi, xp, theta, bounds)
    KiWKi = Kinv @ W @ Kinv
    QiWQi = Qinv @ W @ Qinv
    KiK = k @ Kinv                                          # rows k_a^T K^{-1}

    # per-dimension factors of W'_{ij} for the candidate row
    F = _triple_1d(Psi, c[None, :], xp, theta, a, b)        # (M, d)
    dF = _triple_1d_dq(Psi, c[None, :], xp, theta, a, b)    # (M, d)
    grad = np.empty(d)
    for l in range(d):
        others = np.prod(np.delete(F, l, axis=1), axis=1)
        dWrow = dF[:, l] * others
        dWrow[j] *= 2.0                                     # both arguments move on the diagonal
        dW = np.zeros((M, M))
        dW[j, :] = dWrow
        dW[:, j] = dWrow
        dK = np.zeros((M, M))
        kc = K[:, j].copy()
        kc[j] = 0.0
        dK[:, j] = kc * 2.0 * (Psi[:, l] - c[l]) / theta
        dK[j, :] = dK[:, j]
        dk = np.zeros_like(k)
        dk[:, j] = k[:, j] * 2.0 * (Xn[:, l] - c[l]) / theta
        dr = 2.0 * np.sum(dk * KiK, axis=1) - np.sum((KiK @ dK) * KiK, axis=1)
        dlam = lam**2 * dr                                  # d omega = -dr
        dQ = dK + dk.T @ (lam[:, None] * k) + k.T @ (lam[:, None] * dk) + k.T @ (dlam[:, None] * k)
        grad[l] = (np.sum(KiWKi * dK) - np.sum(Kinv * dW) - np.sum(QiWQi * dQ)
                   + np.sum(Qinv * dW))
    return grad


def _fd_gradient(f, x, h, lo, hi):
    grad = np.empty_like(x)
    for l in range(x.size):
        step = h * max(1.0, abs(x[l]))
        xp, xm = x.copy(), x.copy()
        xp[l] = min(x[l] + step, hi[l])
        xm[l] = max(x[l] - step, lo[l])
        grad[l] = (f(xp) - f(xm)) / (xp[l] - xm[l])
    return grad


def greedy_wimse(Xn, m, theta, cfg=WimseConfig(), anchor=None):
    """Greedy sequential wIMSE design of ``m`` inducing points.

    The first point is ``anchor`` (by default the coordinate-wise median of
    ``Xn``).  Each further point minimizes the criterion by bounded L-BFGS-B
    from ``cfg.multistart`` uniform random starts in the box.  If no start
    improves on the current set, the best start is used and the returned set
    carries ``fallback=True``.
    """
    if m < 1:
        raise InputError("m must be >= 1")
    if not theta > 0:
        raise InputError("theta must be positive")
    Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
    if anchor is None:
        anchor = np.median(Xn, axis=0)
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    bounds = enclosing_box(Xn) if cfg.bounds is None else cfg.bounds
    bounds = np.stack([np.minimum(bounds[0], anchor), np.maximum(bounds[1], anchor)])
    lo, hi = bounds
    rng = np.random.default_rng(cfg.seed)
    current = InducingSet(anchor[None, :], anchor)
    values = [wimse_value(Xn, current.Psi, anchor, theta, cfg.g, bounds, cfg.eps_K)]
    fallback = False

    for _ in range(1, m):
        def f(x, cur=current):
            try:
                return wimse_criterion(Xn, cur, x, theta, cfg.g, bounds, cfg.eps_K)
            except (NumericalError, np.linalg.LinAlgError):
                return np.inf

        if cfg.gradient == "analytic":
            def jac(x, cur=current):
                return wimse_gradient(Xn, cur, x, theta, cfg.g, bounds, cfg.eps_K)
        else:
            def jac(x):
                return _fd_gradient(f, x, cfg.fd_step, lo, hi)

        starts = lo + (hi - lo) * rng.random((cfg.multistart, lo.size))
        best_x, best_f = None, np.inf
        first_x, first_f = None, np.inf
        for x0 in starts:
            f0 = f(x0)
            if f0 < first_f:
                first_x, first_f = x0, f0
            if not np.isfinite(f0):
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = minimize(f, x0, jac=jac, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                               tol=cfg.tol)
            x1 = np.clip(res.x, lo, hi)
            f1 = f(x1)
            if f1 < best_f:
                best_x, best_f = x1, f1
        if best_x is None or not best_f <= values[-1]:
            fallback = True
            if best_x is None:
                best_x, best_f = first_x, first_f
        current = InducingSet(np.vstack([current.Psi, best_x]), anchor)
        values.append(best_f)
    return InducingSet(current.Psi, anchor, fallback=fallback, criterion=tuple(values))


def qnorm_template(Xn, m, seed=0, anchor=None, eps=1e-3):
    """Latin hypercube of ``m - 1`` points warped toward ``anchor``, plus the anchor.

    Each coordinate ``u`` of the LHS is mapped to ``Phi^{-1}(u)`` and scaled so
    that ``Phi^{-1}(1 - eps)`` reaches the half-width of the enclosing box,
    then shifted to the anchor and clipped to the box.
    """
    if m < 1:
        raise InputError("m must be >= 1")
    Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
    if anchor is None:
        anchor = np.median(Xn, axis=0)
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    if m == 1:
        return InducingSet(anchor[None, :], anchor)
    lo, hi = enclosing_box(Xn)
    d = Xn.shape[1]
    u = qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed)).random(m - 1)
    half = 0.5 * (hi - lo)
    z = norm.ppf(u) / norm.ppf(1.0 - eps)
    P = np.clip(anchor + z * half, lo, hi)
    return InducingSet(np.vstack([P, anchor]), anchor)


def transport(template, xprime):
    """Translate ``template`` so that its anchor lands on ``xprime``."""
    x = np.asarray(xprime, dtype=float).reshape(-1)
    if x.size != template.anchor.size:
        raise InputError("site and template differ in dimension")
    return InducingSet(template.Psi + (x - template.anchor), x, template.fallback,
                       template.criterion)
