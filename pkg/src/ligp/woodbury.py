"""Local likelihood and prediction under inducing points and replication.

Everything here is sized by the number of inducing points ``m`` and the
number of unique neighborhood inputs ``nbar``; the total replicate count
``n`` only enters through the per-site sufficient statistics ``(A, Ybar, S)``.

The numerical core works on stacks of independent local problems (leading
batch axis ``B``) so that many prediction sites can be fitted at once.  The
single-site API (:func:`build_system`, :func:`quad_form`, :func:`predict`, ...)
is a thin layer over the batch with ``B = 1``.

Notation, per site::

    k      = k(Xbar, Psi)                      (nbar, m)
    K_m    = k(Psi, Psi) + eps_K I             (m, m)
    omega  = 1 + g - diag(k K_m^{-1} k^T)      (nbar,)
    Lambda = A / omega
    Q      = K_m + k^T Lambda k (+ eps_Q I)    (m, m)
    quad   = sum(S / omega) - b^T Q^{-1} b,    b = k^T (Lambda Ybar)
"""

import contextlib
from dataclasses import dataclass, field

import numpy as np

from ligp.errors import FittingError, InputError, NumericalError
from ligp.kernel import (JitterPolicy, batch_factor, chol_inverse, chol_logdet, chol_solve,
                          sqdist)
from ligp.optimize import minimize_box

DEFAULT_JITTER = JitterPolicy()

_AUDIT = None


@contextlib.contextmanager
def audit_shapes():
    """Record the shapes of per-site working matrices built inside the block."""
    global _AUDIT
    prev, _AUDIT = _AUDIT, []
    try:
        yield _AUDIT
    finally:
        _AUDIT = prev


def _record(**arrays):
    if _AUDIT is not None:
        for name, a in arrays.items():
            # drop the batch axis
            _AUDIT.append((name, tuple(a.shape[1:])))


class ThetaParts:
    """Lengthscale-dependent quantities for a stack of local problems."""

    def __init__(self, Xn, Psi, theta, policy=DEFAULT_JITTER, grad=False, Dk=None, Dm=None):
        theta = np.asarray(theta, dtype=float)
        self.theta = theta
        th = theta[:, None, None]
        Dk = sqdist(Xn, Psi) if Dk is None else Dk
        Dm = sqdist(Psi, Psi) if Dm is None else Dm
        k = np.exp(-Dk / th)
        Km0 = np.exp(-Dm / th)
        Lk, epsK, okK = batch_factor(Km0, policy, "K")
        m = Psi.shape[1]
        eye = np.eye(m)
        self.k = k
        self.Km = Km0 + epsK[:, None, None] * eye
        self.ok = okK
        self.Kinv = chol_inverse(np.where(okK[:, None, None], Lk, eye))
        self.logdetK = np.where(okK, chol_logdet(np.where(okK[:, None, None], Lk, eye)), np.nan)
        self.W = self.Kinv @ np.swapaxes(k, 1, 2)                     # (B, m, nbar)
        self.r = np.sum(k * np.swapaxes(self.W, 1, 2), axis=2)       # (B, nbar)
        self.has_grad = grad
        if grad:
            self.k_t = k * Dk / th**2
            self.K_t = Km0 * Dm / th**2
            KtW = self.K_t @ self.W
            self.r_t = (2.0 * np.sum(self.k_t * np.swapaxes(self.W, 1, 2), axis=2)
                        - np.sum(self.W * KtW, axis=1))
        _record(k=k, K_m=self.Km, W=self.W)

    def take(self, rows):
        new = object.__new__(ThetaParts)
        for key, val in self.__dict__.items():
            new.__dict__[key] = val[rows] if isinstance(val, np.ndarray) else val
        return new


def evaluate(parts, A, Ybar, S, g, policy=DEFAULT_JITTER, grad=False):
    """Concentrated NLL and its pieces for a stack of local problems.

    Returns a dict; ``nll`` is ``inf`` where a site's system is not valid.
    With ``grad=True`` also returns ``d_theta`` (when ``parts`` carries
    lengthscale derivatives) and ``d_g``.
    """
    g = np.asarray(g, dtype=float)
    k = parts.k
    B, nbar, m = k.shape
    omega = 1.0 + g[:, None] - parts.r
    valid = parts.ok & np.all(omega > 0, axis=1)
    omega = np.where(valid[:, None], omega, 1.0)
    lam = A / omega
    Q = parts.Km + np.swapaxes(k, 1, 2) @ (lam[:, :, None] * k)
    Lq, epsQ, okQ = batch_factor(Q, policy, "Q")
    valid &= okQ
    eye = np.eye(m)
    Lq = np.where(valid[:, None, None], Lq, eye)
    Qj = Q + epsQ[:, None, None] * eye
    c = lam * Ybar
    b = np.sum(k * c[:, :, None], axis=1)                               # (B, m)
    beta = chol_solve(Lq, b[:, :, None])[:, :, 0]
    n = A.sum(axis=1)
    quad = np.sum(S / omega, axis=1) - np.sum(b * beta, axis=1)
    valid &= quad > 0
    logdetQ = chol_logdet(Lq)
    sum_alog = np.sum(A * np.log(omega), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        nll = n * np.log(np.where(valid, quad, 1.0)) + logdetQ - parts.logdetK + sum_alog
    nll = np.where(valid, nll, np.inf)
    _record(Q=Qj, omega=omega)
    out = dict(nll=nll, valid=valid, omega=omega, lam=lam, Q=Qj, Lq=Lq, b=b, beta=beta,
               quad=quad, n=n, logdetQ=logdetQ, sum_alog=sum_alog, epsQ=epsQ)
    if not grad:
        return out

    Qinv = chol_inverse(Lq)
    kbeta = np.sum(k * beta[:, None, :], axis=2)                        # (B, nbar)
    kQk = np.sum((k @ Qinv) * k, axis=2)                                # (B, nbar)
    # nugget: d omega / d g = 1
    lam_g = -A / omega**2
    c_g = -c / omega
    b_g = np.sum(k * c_g[:, :, None], axis=1)
    quad_g = (-np.sum(S / omega**2, axis=1) - 2.0 * np.sum(b_g * beta, axis=1)
              + np.sum(lam_g * kbeta**2, axis=1))
    d_g = n * quad_g / quad + np.sum(lam_g * kQk, axis=1) + np.sum(A / omega, axis=1)
    out["d_g"] = np.where(valid, d_g, 0.0)
    out["Qinv"] = Qinv
    if parts.has_grad:
        k_t = parts.k_t
        om_t = -parts.r_t
        lam_t = -A * om_t / omega**2
        c_t = -c * om_t / omega
        b_t = np.sum(k_t * c[:, :, None], axis=1) + np.sum(k * c_t[:, :, None], axis=1)
        kt_beta = np.sum(k_t * beta[:, None, :], axis=2)
        bQb = (np.einsum("bi,bij,bj->b", beta, parts.K_t, beta)
               + 2.0 * np.sum(lam * kt_beta * kbeta, axis=1)
               + np.sum(lam_t * kbeta**2, axis=1))
        quad_t = -np.sum(S * om_t / omega**2, axis=1) - 2.0 * np.sum(b_t * beta, axis=1) + bQb
        trQ = (np.sum(Qinv * parts.K_t, axis=(1, 2))
               + 2.0 * np.sum(lam * np.sum((k_t @ Qinv) * k, axis=2), axis=1)
               + np.sum(lam_t * kQk, axis=1))
        trK = np.sum(parts.Kinv * parts.K_t, axis=(1, 2))
        d_t = n * quad_t / quad + trQ - trK + np.sum(A * om_t / omega, axis=1)
        out["d_theta"] = np.where(valid, d_t, 0.0)
    return out


def predict_moments(parts, ev, Psi, xprime, g):
    """Predictive mean and variance at ``xprime`` (B, d) for evaluated systems."""
    kx = np.exp(-np.sum((Psi - xprime[:, None, :]) ** 2, axis=2) / parts.theta[:, None])
    mu = np.sum(kx * ev["beta"], axis=1)
    tau2 = ev["quad"] / ev["n"]
    Qinv_kx = chol_solve(ev["Lq"], kx[:, :, None])[:, :, 0]
    Kinv_kx = np.sum(parts.Kinv * kx[:, None, :], axis=2)
    s = 1.0 + g - np.sum(kx * Kinv_kx, axis=1) + np.sum(kx * Qinv_kx, axis=1)
    return mu, tau2 * s, tau2


# ---------------------------------------------------------------------------
# Priors and the batched hyperparameter search


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) density used as a -2 log penalty; mode at ``anchor``."""

    shape: float = 1.5
    weight: float = 1.0

    def penalty(self, x, anchor):
        rate = (self.shape - 1.0) / anchor
        return -2.0 * self.weight * ((self.shape - 1.0) * np.log(x) - rate * x)

    def d_penalty(self, x, anchor):
        rate = (self.shape - 1.0) / anchor
        return -2.0 * self.weight * ((self.shape - 1.0) / x - rate)


@dataclass
class BatchProblem:
    """Stacked local problems: neighborhood statistics and inducing sets."""

    Xn: np.ndarray     # (B, nbar, d)
    A: np.ndarray      # (B, nbar)
    Ybar: np.ndarray   # (B, nbar)
    S: np.ndarray      # (B, nbar)
    Psi: np.ndarray    # (B, m, d)
    policy: JitterPolicy = DEFAULT_JITTER
    Dk: np.ndarray = field(default=None, repr=False)
    Dm: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        # squared distances do not depend on theta; compute them once
        if self.Dk is None:
            self.Dk = sqdist(self.Xn, self.Psi)
        if self.Dm is None:
            self.Dm = sqdist(self.Psi, self.Psi)

    def take(self, rows):
        return BatchProblem(self.Xn[rows], self.A[rows], self.Ybar[rows], self.S[rows],
                            self.Psi[rows], self.policy, self.Dk[rows], self.Dm[rows])

    @property
    def size(self):
        return self.Xn.shape[0]


def fit_batch(prob, theta0, g0, theta_bounds, g_bounds, fix_theta=False, fix_g=False,
              theta_prior=None, g_prior=None, theta_anchor=None, g_anchor=None,
              maxiter=100, ftol=1e-9, gtol=1e-5):
    """Minimize the concentrated NLL (plus priors) for every site in a batch.

    Searches over ``log(theta)`` and ``log(g)`` with the bounded quasi-Newton
    of :func:`ligp.optimize.minimize_box`.  Returns a dict with arrays
    ``theta``, ``g``, ``nll``, ``iterations``, ``converged``, ``ok``.
    """
    B = prob.size
    theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), (B,)).copy()
    g0 = np.broadcast_to(np.asarray(g0, dtype=float), (B,)).copy()
    tlo, thi = (np.broadcast_to(np.asarray(v, dtype=float), (B,)) for v in theta_bounds)
    glo, ghi = (np.broadcast_to(np.asarray(v, dtype=float), (B,)) for v in g_bounds)
    theta_anchor = theta0 if theta_anchor is None else np.broadcast_to(theta_anchor, (B,))
    g_anchor = g0 if g_anchor is None else np.broadcast_to(g_anchor, (B,))

    free = []
    if not fix_theta:
        free.append("theta")
    if not fix_g:
        free.append("g")
    fixed_parts = (ThetaParts(prob.Xn, prob.Psi, theta0, prob.policy, Dk=prob.Dk, Dm=prob.Dm)
                   if fix_theta else None)

    def penalty(theta, g, rows):
        f = np.zeros(len(rows))
        dt = np.zeros(len(rows))
        dg = np.zeros(len(rows))
        if theta_prior is not None and not fix_theta:
            f += theta_prior.penalty(theta, theta_anchor[rows])
            dt = theta_prior.d_penalty(theta, theta_anchor[rows])
        if g_prior is not None and not fix_g:
            f += g_prior.penalty(g, g_anchor[rows])
            dg = g_prior.d_penalty(g, g_anchor[rows])
        return f, dt, dg

    def unpack(x, rows):
        j = 0
        theta = theta0[rows]
        g = g0[rows]
        if not fix_theta:
            theta = np.exp(x[:, j])
            j += 1
        if not fix_g:
            g = np.exp(x[:, j])
        return theta, g

    def fun(x, rows):
        theta, g = unpack(x, rows)
        sub = prob.take(rows)
        if fix_theta:
            parts = fixed_parts.take(rows)
        else:
            parts = ThetaParts(sub.Xn, sub.Psi, theta, prob.policy, grad=True, Dk=sub.Dk,
                               Dm=sub.Dm)
        with np.errstate(invalid="ignore", divide="ignore"):
            ev = evaluate(parts, sub.A, sub.Ybar, sub.S, g, prob.policy, grad=True)
        pf, pdt, pdg = penalty(theta, g, rows)
        f = ev["nll"] + pf
        cols = []
        if not fix_theta:
            cols.append(theta * (ev["d_theta"] + pdt))
        if not fix_g:
            cols.append(g * (ev["d_g"] + pdg))
        return f, np.stack(cols, axis=1)

    if not free:
        theta, g = theta0, g0
        parts = ThetaParts(prob.Xn, prob.Psi, theta, prob.policy)
        ev = evaluate(parts, prob.A, prob.Ybar, prob.S, g, prob.policy)
        return dict(theta=theta, g=g, nll=ev["nll"], iterations=np.zeros(B, dtype=int),
                    converged=ev["valid"].copy(), ok=ev["valid"].copy())

    lo = np.stack([np.log(tlo) if p == "theta" else np.log(glo) for p in free], axis=1)
    hi = np.stack([np.log(thi) if p == "theta" else np.log(ghi) for p in free], axis=1)
    x0 = np.stack([np.log(theta0) if p == "theta" else np.log(g0) for p in free], axis=1)
    res = minimize_box(fun, x0, lo, hi, maxiter=maxiter, ftol=ftol, gtol=gtol)
    theta, g = unpack(res["x"], np.arange(B))
    return dict(theta=theta, g=g, nll=res["f"], iterations=res["iterations"],
                converged=res["converged"], ok=np.isfinite(res["f"]))


# ---------------------------------------------------------------------------
# Single-site API


@dataclass(frozen=True)
class Hyperparams:
    tau2: float
    theta: float
    g: float

    def __post_init__(self):
        if not self.tau2 > 0:
            raise InputError("tau2 must be positive")
        if not self.theta > 0:
            raise InputError("theta must be positive")
        if not self.g >= 0:
            raise InputError("g must be non-negative")


def _site_arrays(design, neigh):
    idx = np.asarray(neigh.indices if hasattr(neigh, "indices") else neigh)
    if idx.size == 0:
        raise InputError("empty neighborhood")
    return (design.Xbar[idx], design.A[idx].astype(float), design.Ybar[idx], design.S[idx])


def _psi_array(psi):
    return np.atleast_2d(np.asarray(psi.Psi if hasattr(psi, "Psi") else psi, dtype=float))


@dataclass(frozen=True)
class LocalSystem:
    """Factorized local covariance structure for one prediction site."""

    Xn: np.ndarray
    A: np.ndarray
    Ybar: np.ndarray
    S: np.ndarray
    Psi: np.ndarray
    theta: float
    g: float
    policy: JitterPolicy
    parts: ThetaParts = field(repr=False)
    ev: dict = field(repr=False)

    @property
    def n(self):
        return float(self.A.sum())

    @property
    def nbar(self):
        return self.Xn.shape[0]

    @property
    def m(self):
        return self.Psi.shape[0]

    @property
    def omega(self):
        return self.ev["omega"][0]

    @property
    def Lambda(self):
        return self.ev["lam"][0]

    @property
    def Q(self):
        return self.ev["Q"][0]

    @property
    def K_m(self):
        return self.parts.Km[0]

    @property
    def k_nm(self):
        return self.parts.k[0]


def build_system(design, neigh, psi, theta, g, policy=DEFAULT_JITTER):
    """Assemble and factor the local system for one neighborhood."""
    if not theta > 0:
        raise InputError("theta must be positive")
    if not g >= 0:
        raise InputError("g must be non-negative")
    Xn, A, Ybar, S = _site_arrays(design, neigh)
    Psi = _psi_array(psi)
    if Psi.shape[1] != Xn.shape[1]:
        raise InputError("inducing points and inputs differ in dimension")
    parts = ThetaParts(Xn[None], Psi[None], np.array([theta]), policy)
    if not parts.ok[0]:
        raise NumericalError("K_m factorization failed", {"theta": theta})
    omega = 1.0 + g - parts.r[0]
    if np.any(omega <= 0):
        raise NumericalError("non-positive diagonal correction", {"min_omega": float(omega.min())})
    ev = evaluate(parts, A[None], Ybar[None], S[None], np.array([g]), policy)
    if not np.isfinite(ev["logdetQ"][0]) or not ev["Q"].size:
        raise NumericalError("Q factorization failed", {"theta": theta, "g": g})
    return LocalSystem(Xn, A, Ybar, S, Psi, float(theta), float(g), policy, parts, ev)


def log_det_sigma(sys, tau2):
    """log|Sigma_n| for the implied n x n covariance tau2 * (...)."""
    return (sys.n * np.log(tau2) + sys.ev["logdetQ"][0] - sys.parts.logdetK[0]
            + sys.ev["sum_alog"][0])


def quad_form(sys):
    """Y^T (Sigma_n / tau2)^{-1} Y from sufficient statistics."""
    return float(sys.ev["quad"][0])


def tau2_mle(sys):
    q = quad_form(sys)
    if not q > 0:
        raise NumericalError("non-positive quadratic form", {"quad": q})
    return q / sys.n


def inverse_action(sys, v):
    """Apply ``(Sigma_n / tau2)^{-1}`` to an n-vector.

    ``v`` is ordered in replicate blocks: ``a_1`` entries for the first unique
    site, then ``a_2`` for the second, and so on.
    """
    A = sys.A.astype(int)
    v = np.asarray(v, dtype=float)
    if v.shape != (A.sum(),):
        raise InputError(f"expected a vector of length {A.sum()}")
    om, k = sys.omega, sys.k_nm
    site = np.repeat(np.arange(sys.nbar), A)
    u = np.bincount(site, weights=v, minlength=sys.nbar) / om      # Omega^{-1} U^T v
    w = chol_solve(sys.ev["Lq"][:1], (k.T @ u)[None, :, None])[0, :, 0]
    return v / om[site] - ((k @ w) / om)[site]


def tau2_decomposition(sys):
    """Split the scale MLE into the naive averaged-response estimate and a correction.

    Returns ``(tau2_hat, tau2_bar, correction)`` with

        tau2_hat = (nbar * tau2_bar + Y^T Omega^{-1} Y - Ybar^T Lambda Ybar - correction) / n

    where ``tau2_bar = Ybar^T Sigmabar^{-1} Ybar / nbar`` uses
    ``Sigmabar = k K^{-1} k^T + Delta + g A^{-1}``.  Only sites with ``a_i >= 2``
    contribute to the correction.
    """
    k, Km, A, Ybar, S, g = sys.k_nm, sys.K_m, sys.A, sys.Ybar, sys.S, sys.g
    nbar = sys.nbar
    Kinv = sys.parts.Kinv[0]
    Nys = k @ Kinv @ k.T
    Delta = 1.0 - sys.parts.r[0]
    Sbar = Nys + np.diag(Delta + g / A)
    Sinv_y = np.linalg.solve(Sbar, Ybar)
    tau2_bar = float(Ybar @ Sinv_y) / nbar
    rep = np.flatnonzero(A >= 2)
    if rep.size:
        Dvals = (1.0 / A[rep] - 1.0) * Delta[rep]
        Sinv = np.linalg.inv(Sbar)
        M = Sinv[np.ix_(rep, rep)]
        # (D^{-1} + M)^{-1} = (I + D M)^{-1} D, stable for tiny Delta
        inner = np.linalg.solve(np.eye(rep.size) + Dvals[:, None] * M, np.diag(Dvals))
        z = Sinv_y[rep]
        correction = float(z @ inner @ z)
    else:
        correction = 0.0
    omega = sys.omega
    yOy = float(np.sum(S / omega))
    yLy = float(np.sum(A / omega * Ybar**2))
    tau2_hat = (nbar * tau2_bar + yOy - yLy - correction) / sys.n
    return tau2_hat, tau2_bar, correction


def concentrated_nll(design, neigh, psi, theta, g, policy=DEFAULT_JITTER,
                     theta_prior=None, g_prior=None, theta_anchor=None, g_anchor=None):
    """n log(quad) + log|Q| - log|K_m| + sum a_i log omega_i (+ prior penalties)."""
    f, _ = _nll_grad(design, neigh, psi, theta, g, policy, theta_prior, g_prior,
                     theta_anchor, g_anchor, grad=False)
    return f


def concentrated_nll_grad(design, neigh, psi, theta, g, policy=DEFAULT_JITTER,
                          theta_prior=None, g_prior=None, theta_anchor=None, g_anchor=None):
    """Analytic (d/dtheta, d/dg) of :func:`concentrated_nll`."""
    _, grad = _nll_grad(design, neigh, psi, theta, g, policy, theta_prior, g_prior,
                        theta_anchor, g_anchor, grad=True)
    return grad


def _nll_grad(design, neigh, psi, theta, g, policy, theta_prior, g_prior, theta_anchor,
              g_anchor, grad):
    Xn, A, Ybar, S = _site_arrays(design, neigh)
    Psi = _psi_array(psi)
    parts = ThetaParts(Xn[None], Psi[None], np.array([float(theta)]), policy, grad=grad)
    ev = evaluate(parts, A[None], Ybar[None], S[None], np.array([float(g)]), policy, grad=grad)
    if not ev["valid"][0]:
        raise NumericalError("local system invalid", {"theta": theta, "g": g})
    f = float(ev["nll"][0])
    dt = float(ev["d_theta"][0]) if grad else 0.0
    dg = float(ev["d_g"][0]) if grad else 0.0
    if theta_prior is not None:
        f += float(theta_prior.penalty(theta, theta_anchor))
        dt += float(theta_prior.d_penalty(theta, theta_anchor))
    if g_prior is not None:
        f += float(g_prior.penalty(g, g_anchor))
        dg += float(g_prior.d_penalty(g, g_anchor))
    return f, (dt, dg)


@dataclass(frozen=True)
class LocalFit:
    params: Hyperparams
    iterations: int
    converged: bool
    nll: float


def fit_hyperparams(design, neigh, psi, init, bounds, priors=(None, None),
                    policy=DEFAULT_JITTER, anchors=None, fix_theta=False, fix_g=False,
                    **opt):
    """Bounded quasi-Newton fit of (theta, g) for one site.

    ``init`` is ``(theta0, g0)``; ``bounds`` is ``((theta_lo, theta_hi), (g_lo, g_hi))``.
    ``priors`` are optional :class:`GammaPrior` objects for theta and g with
    modes at ``anchors`` (defaults to ``init``).
    """
    (tlo, thi), (glo, ghi) = bounds
    if not (0 < tlo <= thi and 0 < glo <= ghi):
        raise InputError("bounds must be positive and ordered")
    theta0, g0 = init
    if not (tlo <= theta0 <= thi and glo <= g0 <= ghi):
        raise InputError("initial values outside bounds")
    Xn, A, Ybar, S = _site_arrays(design, neigh)
    Psi = _psi_array(psi)
    prob = BatchProblem(Xn[None], A[None], Ybar[None], S[None], Psi[None], policy)
    anchors = anchors or init
    res = fit_batch(prob, theta0, g0, (tlo, thi), (glo, ghi), fix_theta=fix_theta, fix_g=fix_g,
                    theta_prior=priors[0], g_prior=priors[1], theta_anchor=anchors[0],
                    g_anchor=anchors[1], **opt)
    if not res["ok"][0]:
        raise FittingError("no valid local system along the search")
    theta, g = float(res["theta"][0]), float(res["g"][0])
    sys = build_system(design, neigh, psi, theta, g, policy)
    return LocalFit(Hyperparams(tau2_mle(sys), theta, g), int(res["iterations"][0]),
                    bool(res["converged"][0]), float(res["nll"][0]))


def predict(fit, sys, xprime):
    """Predictive mean and variance at ``xprime`` using the fitted scale."""
    x = np.atleast_1d(np.asarray(xprime, dtype=float))
    mu, s2, _ = predict_moments(sys.parts, sys.ev, sys.Psi[None], x[None], np.array([sys.g]))
    tau2 = fit.params.tau2 if fit is not None else tau2_mle(sys)
    s = s2[0] / (sys.ev["quad"][0] / sys.n)
    return float(mu[0]), float(tau2 * s)
