"""Bermudan max-call pricing by regression Monte Carlo with LIGP surrogates.

Working backward from the last exercise date, the timing value
``T_k(x) = E[H_k | X_k = x]`` is learned from replicated pathwise payoffs

    H_k = h(tau, X_tau) - h(k, X_k),

where ``tau > k`` is the first date at which the already-fitted surrogates
say to stop (in the money and ``T_s(X_s) < 0``), or the final date if the
option is in the money there.  Pricing then runs the same rule forward on
fresh paths from ``X0``.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from ligp.design import RawDesign
from ligp.errors import FittingError, InputError, LigpError
from ligp.model import LigpConfig, LigpSurrogate


@dataclass(frozen=True)
class GbmModel:
    """Independent geometric Brownian motions observed every ``dt``.

    ``K_steps`` is the number of exercise dates after time zero, so the
    maturity is ``K_steps * dt``.
    """

    d: int
    r: float
    delta: np.ndarray
    sigma: np.ndarray
    dt: float
    K_steps: int
    X0: np.ndarray

    def __post_init__(self):
        for name in ("delta", "sigma", "X0"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (self.d,)).copy()
            object.__setattr__(self, name, v)
        if np.any(self.sigma < 0):
            raise InputError("volatilities must be non-negative")
        if not self.dt > 0:
            raise InputError("dt must be positive")
        if self.K_steps < 1:
            raise InputError("K_steps must be >= 1")
        if np.any(self.X0 <= 0):
            raise InputError("initial prices must be positive")

    @property
    def maturity(self):
        return self.K_steps * self.dt


@dataclass(frozen=True)
class MaxCallPayoff:
    """``h(k, x) = exp(-r k dt) (max_i x_i - strike)_+``."""

    strike: float
    r: float
    dt: float

    def __post_init__(self):
        if not self.strike > 0:
            raise InputError("strike must be positive")


def gbm_step(x, model, rng, steps=1):
    """Exact log-normal transition over ``steps * dt`` for rows of ``x``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InputError("prices must be positive")
    h = steps * model.dt
    z = rng.standard_normal(x.shape)
    drift = (model.r - model.delta - 0.5 * model.sigma**2) * h
    return x * np.exp(drift + model.sigma * np.sqrt(h) * z)


def payoff(k, x, p):
    """Discounted max-call payoff at step ``k`` for a point or rows of ``x``."""
    if k < 0:
        raise InputError("step must be non-negative")
    x = np.asarray(x, dtype=float)
    return np.exp(-p.r * k * p.dt) * np.maximum(np.max(x, axis=-1) - p.strike, 0.0)


def simulate_paths(X, model, rng, n_steps):
    """Paths of ``n_steps`` transitions from each row of ``X``: (N, n_steps + 1, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((X.shape[0], n_steps + 1, X.shape[1]))
    out[:, 0] = X
    for j in range(n_steps):
        out[:, j + 1] = gbm_step(out[:, j], model, rng)
    return out


# ---------------------------------------------------------------------------
# Surrogate chain


@dataclass
class SurrogateChain:
    """Timing-value surrogates for steps ``1..K-1`` (``surrogates[k]``).

    Each surrogate exposes ``predict(X)`` returning an object with a ``mu``
    array.  ``fit_times`` and ``design_sizes`` are keyed by step.
    """

    model: GbmModel
    payoff: MaxCallPayoff
    surrogates: dict = field(default_factory=dict)
    fit_times: dict = field(default_factory=dict)
    design_sizes: dict = field(default_factory=dict)

    def timing_value(self, k, X):
        if X.shape[0] == 0:
            return np.empty(0)
        return np.asarray(self.surrogates[k].predict(X).mu)


def _exercise(chain, s, x, h, K):
    """Exercise decisions at step ``s`` for prices ``x`` with payoffs ``h``."""
    itm = h > 0
    if s == K:
        return itm
    if chain is None or s not in chain.surrogates:
        return np.zeros_like(itm)
    ex = np.zeros_like(itm)
    idx = np.flatnonzero(itm)
    ex[idx] = chain.timing_value(s, x[idx]) < 0
    return ex


def run_policy(paths, k, p, chain, K):
    """Collected payoff and exercise step along paths starting at step ``k``.

    ``paths`` is (N, K - k + 1, d) with column ``j`` the prices at step
    ``k + j``.  Decisions are taken at steps ``k+1..K``; with ``chain=None``
    only the final date can be used (the European policy).
    """
    N = paths.shape[0]
    value = np.zeros(N)
    when = np.full(N, -1)
    alive = np.ones(N, dtype=bool)
    for s in range(k + 1, K + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x = paths[idx, s - k]
        h = payoff(s, x, p)
        ex = _exercise(chain, s, x, h, K)
        hit = idx[ex]
        value[hit] = h[ex]
        when[hit] = s
        alive[hit] = False
    return value, when


def pathwise_payoff(path, chain, k, p):
    """``H_k`` for one path ``x_k..x_K`` (rows) under the chain's exercise rule."""
    path = np.asarray(path, dtype=float)
    K = k + path.shape[0] - 1
    value, _ = run_policy(path[None], k, p, chain, K)
    return float(value[0] - payoff(k, path[0], p))


@dataclass(frozen=True)
class DesignSpec:
    """Training design for each step's surrogate.

    ``method="lhs"`` draws ``n_candidates`` Latin hypercube points in
    ``bounds`` and keeps those in the money.  ``method="lognormal"`` samples
    the step-``k`` price distribution from ``X0`` and keeps in-the-money draws
    until ``n_unique`` sites are found.  Every site gets ``a`` independent
    continuation paths.
    """

    method: str = "lhs"
    n_unique: int = 650
    n_candidates: int = 867
    a: int = 25
    bounds: np.ndarray = None
    prescale_size: int = 300

    def __post_init__(self):
        if self.method not in ("lhs", "lognormal"):
            raise InputError(f"unknown design method {self.method!r}")
        if self.method == "lhs" and self.bounds is None:
            raise InputError("the lhs design needs bounds")
        if self.a < 1 or self.n_unique < 1 or self.n_candidates < 1:
            raise InputError("design sizes must be >= 1")


def step_sites(spec, model, p, k, rng):
    """In-the-money training sites for step ``k``."""
    if spec.method == "lhs":
        b = np.asarray(spec.bounds, dtype=float)
        u = qmc.LatinHypercube(d=model.d, seed=rng).random(spec.n_candidates)
        X = qmc.scale(u, b[0], b[1])
        return X[payoff(k, X, p) > 0]
    out = []
    count = 0
    while count < spec.n_unique:
        X = model.X0 * np.exp((model.r - model.delta - 0.5 * model.sigma**2) * k * model.dt
                              + model.sigma * np.sqrt(k * model.dt)
                              * rng.standard_normal((spec.n_unique, model.d)))
        X = X[payoff(k, X, p) > 0]
        out.append(X)
        count += X.shape[0]
    return np.vstack(out)[:spec.n_unique]


def fit_chain(model, p, spec, cfg=LigpConfig(), seed=0, log=None):
    """Fit timing-value surrogates backward for ``k = K-1, ..., 1``."""
    K = model.K_steps
    chain = SurrogateChain(model, p)
    streams = np.random.SeedSequence([seed, 11]).spawn(K)
    for k in range(K - 1, 0, -1):
        t0 = time.perf_counter()
        rng = np.random.default_rng(streams[k])
        sites = step_sites(spec, model, p, k, rng)
        if sites.shape[0] < 2:
            raise FittingError(f"step {k}: fewer than two in-the-money design sites")
        starts = np.repeat(sites, spec.a, axis=0)
        paths = simulate_paths(starts, model, rng, K - k)
        value, _ = run_policy(paths, k, p, chain, K)
        H = value - payoff(k, starts, p)
        try:
            sur = LigpSurrogate(RawDesign(starts, H), cfg, prescale=spec.prescale_size or None)
        except LigpError as exc:
            raise FittingError(f"step {k}: {exc}") from exc
        chain.surrogates[k] = sur
        chain.fit_times[k] = time.perf_counter() - t0
        chain.design_sizes[k] = int(sites.shape[0])
        if log is not None:
            log(f"step {k}: {sites.shape[0]} sites fitted in {chain.fit_times[k]:.1f}s")
    return chain


@dataclass
class PricingResult:
    price: float
    stderr: float
    exercise_rate: dict
    fit_times: dict
    n_paths: int

    def to_dict(self):
        return {"price": self.price, "stderr": self.stderr,
                "exercise_rate": {str(k): v for k, v in self.exercise_rate.items()},
                "fit_times": {str(k): v for k, v in self.fit_times.items()},
                "n_paths": self.n_paths}


def scenario_paths(model, n_paths, seed):
    """Shared test scenarios from ``X0``: (n_paths, K + 1, d)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 12]))
    return simulate_paths(np.broadcast_to(model.X0, (n_paths, model.d)), model, rng,
                          model.K_steps)


def evaluate_paths(paths, p, chain, K):
    """Price, standard error and per-step exercise rate on fixed paths."""
    value, when = run_policy(paths, 0, p, chain, K)
    N = paths.shape[0]
    rates = {s: float(np.mean(when == s)) for s in range(1, K + 1)}
    return float(value.mean()), float(value.std(ddof=1) / np.sqrt(N)), rates


def price(chain, model, p, n_paths=25000, seed=0, paths=None):
    """Forward Monte Carlo price of the chain's exercise policy.

    Decisions at time zero are not considered (the option is out of the
    money at ``X0`` in the benchmark settings).
    """
    if n_paths < 2:
        raise InputError("need at least two test paths")
    if paths is None:
        paths = scenario_paths(model, n_paths, seed)
    est, se, rates = evaluate_paths(paths, p, chain, model.K_steps)
    return PricingResult(est, se, rates, dict(chain.fit_times), paths.shape[0])


def european_price(model, p, n_paths=25000, seed=0, paths=None):
    """Price of exercising only at maturity, on the same test paths as :func:`price`."""
    if paths is None:
        paths = scenario_paths(model, n_paths, seed)
    est, se, rates = evaluate_paths(paths, p, None, model.K_steps)
    return PricingResult(est, se, rates, {}, paths.shape[0])


def bs_call(x, strike, r, delta, sigma, tau):
    """Black-Scholes value of a call on a dividend-paying asset."""
    x = np.asarray(x, dtype=float)
    sq = sigma * np.sqrt(tau)
    d1 = (np.log(x / strike) + (r - delta + 0.5 * sigma**2) * tau) / sq
    return x * np.exp(-delta * tau) * norm.cdf(d1) - strike * np.exp(-r * tau) * norm.cdf(d1 - sq)


def timing_grid(chain, k, bounds, n=41):
    """Fitted timing value of step ``k`` on an ``n x n`` grid (two assets only)."""
    if chain.model.d != 2:
        raise InputError("timing-value grids are only produced for two assets")
    b = np.asarray(bounds, dtype=float)
    g1 = np.linspace(b[0, 0], b[1, 0], n)
    g2 = np.linspace(b[0, 1], b[1, 1], n)
    G = np.array([(u, v) for u in g1 for v in g2])
    h = payoff(k, G, chain.payoff)
    T = np.full(G.shape[0], np.nan)
    itm = h > 0
    T[itm] = chain.timing_value(k, G[itm])
    return G, T


def preset_2d(seed=0):
    """Two symmetric assets from 90 with nine exercise dates over three years."""
    model = GbmModel(d=2, r=0.05, delta=0.1, sigma=0.2, dt=1.0 / 3.0, K_steps=9,
                     X0=np.full(2, 90.0))
    p = MaxCallPayoff(100.0, 0.05, 1.0 / 3.0)
    spec = DesignSpec("lhs", n_unique=650, n_candidates=867, a=25,
                      bounds=np.array([[50.0, 50.0], [150.0, 150.0]]))
    cfg = LigpConfig(nbar=50, m=10, theta=1.0, seed=seed)
    return model, p, spec, cfg


def preset_5d(seed=0):
    """Five assets with volatilities 0.08, 0.16, ..., 0.40 from 70."""
    model = GbmModel(d=5, r=0.05, delta=0.1, sigma=0.08 * np.arange(1, 6), dt=1.0 / 3.0,
                     K_steps=9, X0=np.full(5, 70.0))
    p = MaxCallPayoff(100.0, 0.05, 1.0 / 3.0)
    spec = DesignSpec("lognormal", n_unique=2000, a=10)
    cfg = LigpConfig(nbar=50, m=30, seed=seed)
    return model, p, spec, cfg
