"""End-to-end local inducing-point GP prediction over many sites.

For every prediction site the pipeline takes the ``nbar`` nearest unique
inputs, translates a shared inducing-point template onto the site, fits the
lengthscale and nugget by maximum (penalized) likelihood and returns the
predictive mean and variance.  Sites are processed in fixed-size chunks
through the batched routines of :mod:`ligp.woodbury`; chunk boundaries do not
depend on the worker count, so results are identical for any number of
workers.
"""

import logging
import multiprocessing
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ligp.design import (PrescaleTransform, RawDesign, ReplicatedDesign, apply_prescale,
                         compress, fit_prescale)
from ligp.errors import InputError
from ligp.kernel import JitterPolicy, sqdist
from ligp.neighborhood import build_index, neighborhood
from ligp.templates import InducingSet, WimseConfig, greedy_wimse, qnorm_template, transport
from ligp.woodbury import (BatchProblem, GammaPrior, ThetaParts, evaluate, fit_batch,
                           predict_moments)

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_FALLBACK = "fallback"


def default_m(d):
    """10 inducing points up to two dimensions, 30 from four, 20 in between."""
    return int(np.clip(10 + 10 * (d - 2), 10, 30))


@dataclass(frozen=True)
class LigpConfig:
    """Settings for local inducing-point prediction.

    ``m=None`` selects :func:`default_m`.  ``theta`` fixes the lengthscale
    (estimated when ``None``); with ``estimate_nugget=False`` the nugget is
    held at ``g_fixed``.
    """

    nbar: int = 100
    m: int = None
    template: str = "qnorm"
    estimate_nugget: bool = True
    g_fixed: float = 1e-8
    theta: float = None
    eps_K: float = 1e-8
    eps_Q: float = 1e-5
    theta_bound_factor: float = 100.0
    g_bounds: tuple = (1e-8, 10.0)
    priors: bool = True
    prior_shape: float = 1.5
    g_init_fallback: float = 0.1
    maxiter: int = 100
    wimse_multistart: int = 20
    wimse_tol: float = 0.01
    wimse_gradient: str = "fd"
    wimse_g: float = 1e-4
    chunk_size: int = 128
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.nbar < 1:
            raise InputError("nbar must be >= 1")
        if self.m is not None and self.m < 1:
            raise InputError("m must be >= 1")
        if self.template not in ("qnorm", "wimse"):
            raise InputError(f"unknown template {self.template!r}")
        if self.theta is not None and not self.theta > 0:
            raise InputError("theta must be positive")
        if not self.g_fixed > 0:
            raise InputError("g_fixed must be positive")
        lo, hi = self.g_bounds
        if not 0 < lo < hi:
            raise InputError("g_bounds must satisfy 0 < lo < hi")
        if not self.theta_bound_factor > 1:
            raise InputError("theta_bound_factor must exceed 1")
        if self.chunk_size < 1 or self.workers < 1:
            raise InputError("chunk_size and workers must be >= 1")

    def resolved_m(self, d):
        return self.m if self.m is not None else default_m(d)

    @property
    def jitter(self):
        return JitterPolicy(eps_K=self.eps_K, eps_Q=self.eps_Q)

    def to_dict(self):
        out = asdict(self)
        out["g_bounds"] = list(self.g_bounds)
        return out


@dataclass
class PredictionBatch:
    """Predictions and per-site diagnostics, in input order."""

    sites: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    theta: np.ndarray
    g: np.ndarray
    tau2: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    wall_time: float = 0.0

    @property
    def n_fallback(self):
        return int(np.sum(self.status != STATUS_OK))

    @property
    def noise_variance(self):
        """Estimated observation-noise variance ``g * tau2`` per site."""
        return self.g * self.tau2


# ---------------------------------------------------------------------------
# Initial values


def theta_init(Xn):
    """10% quantile of squared pairwise distances among the rows of ``Xn``."""
    Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
    if Xn.shape[0] < 2:
        raise InputError("need at least two inputs to initialize theta")
    return float(theta_init_batch(Xn[None])[0])


def theta_init_batch(Xn):
    """Vectorized :func:`theta_init` over a (B, nbar, d) stack."""
    nbar = Xn.shape[1]
    iu = np.triu_indices(nbar, k=1)
    D = sqdist(Xn, Xn)[:, iu[0], iu[1]]
    return np.quantile(D, 0.1, axis=1)


def nugget_init_batch(A, Ybar, S, fallback=0.1):
    """Noise-to-signal ratio from replicate spread, ``r / (1 - r)``.

    ``r`` is the pooled within-site variance divided by the total variance of
    all local responses.  Neighborhoods without replicates (or where the
    ratio is not in (0, 1)) get ``fallback``.
    """
    n = A.sum(axis=1)
    within_ss = np.sum(np.maximum(S - A * Ybar**2, 0.0), axis=1)
    dof = np.sum(A - 1.0, axis=1)
    mean = np.sum(A * Ybar, axis=1) / n
    total_ss = np.maximum(np.sum(S, axis=1) - n * mean**2, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        within = within_ss / dof
        total = total_ss / (n - 1.0)
        r = within / total
        g = r / (1.0 - r)
    good = (dof > 0) & (n > 1) & np.isfinite(g) & (r > 0) & (r < 1)
    return np.where(good, g, fallback)


def local_variance(A, Ybar, S):
    """Sample variance of all local responses, used for fallback predictions."""
    n = A.sum(axis=1)
    mean = np.sum(A * Ybar, axis=1) / n
    var = np.maximum(np.sum(S, axis=1) - n * mean**2, 0.0) / np.maximum(n - 1.0, 1.0)
    return np.where(var > 0, var, np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# The fitted predictor


@dataclass
class LocalState:
    """Everything a worker needs: centered design, index, template and config."""

    design: ReplicatedDesign
    offset: float
    template: InducingSet
    cfg: LigpConfig
    index: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.index is None:
            self.index = build_index(self.design)


def build_template(design, cfg, nbar=None):
    """Template anchored at the coordinate-wise median of the unique inputs."""
    d = design.d
    nbar = min(nbar or cfg.nbar, design.nbar)
    m = cfg.resolved_m(d)
    anchor = np.median(design.Xbar, axis=0)
    index = build_index(design)
    nb = neighborhood(index, design, anchor, nbar)
    Xn = design.Xbar[nb.indices]
    if cfg.template == "qnorm":
        return qnorm_template(Xn, m, seed=cfg.seed, anchor=anchor)
    if cfg.theta is not None:
        theta = cfg.theta
    elif Xn.shape[0] >= 2:
        theta = theta_init(Xn)
    else:
        theta = 1.0
    wcfg = WimseConfig(multistart=cfg.wimse_multistart, tol=cfg.wimse_tol,
                       gradient=cfg.wimse_gradient, g=cfg.wimse_g, eps_K=cfg.eps_K,
                       seed=cfg.seed)
    return greedy_wimse(Xn, m, theta, wcfg, anchor=anchor)


def prepare(design, cfg, template=None):
    """Center responses, clamp ``nbar`` and build the shared template."""
    if not isinstance(design, ReplicatedDesign):
        design = compress(design)
    nbar = cfg.nbar
    if nbar > design.nbar:
        warnings.warn(f"nbar={nbar} exceeds the {design.nbar} unique inputs; clamping")
        cfg = LigpConfig(**{**cfg.to_dict(), "nbar": design.nbar, "g_bounds": cfg.g_bounds})
    m = cfg.resolved_m(design.d)
    if m > cfg.nbar:
        warnings.warn(f"m={m} exceeds nbar={cfg.nbar}")
    offset = float(np.sum(design.A * design.Ybar) / design.n_total)
    centered = design.shift_response(offset)
    if template is None:
        template = build_template(centered, cfg)
    return LocalState(centered, offset, template, cfg)


def _predict_chunk(state, X):
    """Fit and predict for a (B, d) block of sites."""
    cfg = state.cfg
    des = state.design
    B, d = X.shape
    policy = cfg.jitter
    idx, _ = state.index.query(X, cfg.nbar)
    Xn = des.Xbar[idx]
    A = des.A[idx].astype(float)
    Ybar = des.Ybar[idx]
    S = des.S[idx]
    Psi = state.template.Psi[None, :, :] + (X - state.template.anchor)[:, None, :]

    if cfg.theta is not None:
        theta0 = np.full(B, float(cfg.theta))
    elif cfg.nbar >= 2:
        theta0 = theta_init_batch(Xn)
        theta0 = np.where(theta0 > 0, theta0, 1.0)
    else:
        theta0 = np.ones(B)
    g0 = (nugget_init_batch(A, Ybar, S, cfg.g_init_fallback) if cfg.estimate_nugget
          else np.full(B, cfg.g_fixed))
    glo, ghi = cfg.g_bounds
    g0 = np.clip(g0, glo, ghi) if cfg.estimate_nugget else g0
    prior = GammaPrior(cfg.prior_shape) if cfg.priors else None
    prob = BatchProblem(Xn, A, Ybar, S, Psi, policy)
    res = fit_batch(prob, theta0, g0,
                    (theta0 / cfg.theta_bound_factor, theta0 * cfg.theta_bound_factor),
                    (glo, ghi), fix_theta=cfg.theta is not None,
                    fix_g=not cfg.estimate_nugget, theta_prior=prior, g_prior=prior,
                    theta_anchor=theta0, g_anchor=g0, maxiter=cfg.maxiter)
    theta, g = res["theta"], res["g"]
    parts = ThetaParts(Xn, Psi, theta, policy, Dk=prob.Dk, Dm=prob.Dm)
    ev = evaluate(parts, A, Ybar, S, g, policy)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        mu, s2, tau2 = predict_moments(parts, ev, Psi, X, g)
    ok = ev["valid"] & np.isfinite(mu) & np.isfinite(s2) & (s2 > 0)
    var = local_variance(A, Ybar, S)
    mu = np.where(ok, mu, 0.0) + state.offset
    s2 = np.where(ok, s2, var)
    status = np.where(ok, STATUS_OK, STATUS_FALLBACK)
    return dict(mu=mu, sigma2=s2, theta=theta, g=g, tau2=np.where(ok, tau2, var),
                status=status, iterations=res["iterations"], converged=res["converged"])


_WORKER_STATE = None


def _init_worker(state):
    global _WORKER_STATE
    _WORKER_STATE = state


def _run_chunk(X):
    return _predict_chunk(_WORKER_STATE, X)


def run_sites(state, sites, workers=None):
    """Predict at ``sites`` (already in model coordinates) with ``state``."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if sites.shape[1] != state.design.d:
        raise InputError(f"sites are {sites.shape[1]}-d but the design is {state.design.d}-d")
    if not np.all(np.isfinite(sites)):
        raise InputError("prediction sites must be finite")
    workers = state.cfg.workers if workers is None else workers
    t0 = time.perf_counter()
    cs = state.cfg.chunk_size
    chunks = [sites[i:i + cs] for i in range(0, sites.shape[0], cs)]
    if workers > 1 and len(chunks) > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                 initializer=_init_worker, initargs=(state,)) as ex:
            parts = list(ex.map(_run_chunk, chunks))
    else:
        parts = [_predict_chunk(state, c) for c in chunks]
    if parts:
        out = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    else:
        out = {k: np.empty(0) for k in ("mu", "sigma2", "theta", "g", "tau2", "status",
                                         "iterations", "converged")}
    return PredictionBatch(sites=sites, wall_time=time.perf_counter() - t0, **out)


def predict_batch(design, sites, cfg=LigpConfig(), template=None):
    """Local inducing-point predictions at every row of ``sites``.

    ``design`` (raw or compressed) and ``sites`` must already be in the
    model's input scale.  Output order matches ``sites``.
    """
    state = prepare(design, cfg, template)
    return run_sites(state, sites)


def fit_predict_site(design, index, template, xprime, cfg=LigpConfig()):
    """Single-site prediction: returns ``(mu, sigma2, diagnostics)``.

    ``template`` is transported to ``xprime``; ``index`` must be built over
    ``design``.
    """
    if not isinstance(design, ReplicatedDesign):
        design = compress(design)
    offset = float(np.sum(design.A * design.Ybar) / design.n_total)
    state = LocalState(design.shift_response(offset), offset, template, cfg, index)
    x = np.asarray(xprime, dtype=float).reshape(1, -1)
    site_template = transport(template, x[0])
    out = _predict_chunk(state, x)
    diag = {k: (v[0].item() if hasattr(v[0], "item") else v[0]) for k, v in out.items()
            if k not in ("mu", "sigma2")}
    diag["inducing_points"] = site_template.Psi
    return float(out["mu"][0]), float(out["sigma2"][0]), diag


class LigpSurrogate:
    """A fitted LIGP predictor with optional input prescaling.

    Parameters
    ----------
    data : RawDesign or ReplicatedDesign
        Training data in original input units.
    cfg : LigpConfig
    prescale : PrescaleTransform, int or None
        A fitted transform, a subset size for fitting one, or ``None`` for
        no scaling.
    """

    def __init__(self, data, cfg=LigpConfig(), prescale=None, template=None):
        design = data if isinstance(data, ReplicatedDesign) else compress(data)
        if isinstance(prescale, (int, np.integer)) and not isinstance(prescale, bool):
            prescale = fit_prescale(design, subset_size=int(prescale), seed=cfg.seed)
        self.transform = prescale if prescale is not None else PrescaleTransform.identity(design.d)
        self.cfg = cfg
        self.state = prepare(design.with_inputs(apply_prescale(self.transform, design.Xbar)),
                             cfg, template)

    @property
    def d(self):
        return self.state.design.d

    def predict(self, X, workers=None):
        """Predictions at rows of ``X`` (original units)."""
        Z = apply_prescale(self.transform, X)
        batch = run_sites(self.state, Z, workers)
        batch.sites = np.atleast_2d(np.asarray(X, dtype=float))
        return batch


def available_workers():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
