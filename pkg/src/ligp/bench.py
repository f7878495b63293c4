"""Benchmark simulators, replicated design generation and accuracy metrics."""

import time
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import qmc

from ligp.design import RawDesign, compress
from ligp.errors import InputError

HERBIE_BOUNDS = np.array([[-2.0, -2.0], [2.0, 2.0]])
SIR_BOUNDS = np.array([[0.0, 0.0], [1.0, 1.0]])


# ---------------------------------------------------------------------------
# Herbie's tooth


def herbie_w(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-((x - 1.0) ** 2)) + np.exp(-0.8 * (x + 1.0) ** 2) - 0.05 * np.sin(8.0 * (x + 0.1))


def herbie_mean(x):
    """-w(x1) w(x2) for a point or rows of an (N, 2) array."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise InputError("Herbie's tooth is two-dimensional")
    return -herbie_w(x[..., 0]) * herbie_w(x[..., 1])


def herbie_sample(x, seed, noise_sd=0.02):
    """One noisy Herbie draw; the noise stream is keyed by ``seed``."""
    rng = np.random.default_rng(seed)
    f = herbie_mean(x)
    return f + noise_sd * rng.standard_normal(np.shape(f)) if noise_sd > 0 else f


# ---------------------------------------------------------------------------
# Stochastic SIR epidemic


@dataclass(frozen=True)
class SirParams:
    """Continuous-time Markov SIR chain; the response is infected-days / ``scale``."""

    population: int = 1000
    beta: float = 0.75
    gamma: float = 0.5
    scale: float = 1000.0


@numba.njit(cache=True)
def _sir_path(S, I, N, beta, gamma):
    total = 0.0
    while I > 0:
        rate_inf = beta * S * I / N
        rate_rec = gamma * I
        rate = rate_inf + rate_rec
        dt = -np.log(1.0 - np.random.random()) / rate
        total += I * dt
        if np.random.random() * rate < rate_inf:
            S -= 1
            I += 1
        else:
            I -= 1
    return total


@numba.njit(cache=True)
def _sir_many(S0, I0, seeds, N, beta, gamma):
    out = np.empty(S0.size)
    for j in range(S0.size):
        np.random.seed(seeds[j])
        out[j] = _sir_path(S0[j], I0[j], N, beta, gamma)
    return out


def _sir_initial(X, N):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != 2:
        raise InputError("the SIR simulator takes two inputs")
    if np.any(X < 0) or np.any(X > 1):
        raise InputError("SIR inputs must lie in the unit square")
    S0 = np.rint(X[:, 0] * N).astype(np.int64)
    I0 = np.rint(X[:, 1] * (N - S0)).astype(np.int64)
    return S0, I0


def sir_batch(X, seeds, params=SirParams()):
    """One SIR trajectory per row of ``X``, each with its own integer seed.

    Inputs are ``(s0_frac, i0_frac)``: ``S0 = round(s0_frac * N)`` and
    ``I0 = round(i0_frac * (N - S0))``.
    """
    S0, I0 = _sir_initial(X, params.population)
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1) % (2**32)
    if seeds.size != S0.size:
        raise InputError("need one seed per input row")
    return _sir_many(S0, I0, seeds, float(params.population), params.beta, params.gamma) / params.scale


def sir_sample(x, seed, params=SirParams()):
    """Aggregate infected-days of one SIR trajectory, scaled by ``params.scale``."""
    return float(sir_batch(np.asarray(x, dtype=float).reshape(1, 2), [seed], params)[0])


def draw_seeds(seed, n, stream=0):
    """``n`` independent 32-bit seeds, one per site, from a named stream."""
    return np.random.SeedSequence([seed, stream]).generate_state(n).astype(np.int64)


# ---------------------------------------------------------------------------
# Designs


@dataclass(frozen=True)
class BenchmarkSpec:
    """A replicated benchmark experiment.

    ``replication`` is ``"fixed"`` (every site gets ``a`` runs) or
    ``"uniform"`` (``a_i ~ Unif{1..a}``).
    """

    simulator: str = "herbie"
    n_unique: int = 2000
    a: int = 10
    replication: str = "uniform"
    n_test: int = 2000
    seed: int = 0
    noise_sd: float = 0.02
    sir: SirParams = field(default_factory=SirParams)

    def __post_init__(self):
        if self.simulator not in ("herbie", "sir"):
            raise InputError(f"unknown simulator {self.simulator!r}")
        if self.replication not in ("fixed", "uniform"):
            raise InputError(f"unknown replication rule {self.replication!r}")
        if self.n_unique < 1 or self.n_test < 1 or self.a < 1:
            raise InputError("n_unique, n_test and a must be >= 1")

    @property
    def bounds(self):
        return HERBIE_BOUNDS if self.simulator == "herbie" else SIR_BOUNDS


def lhs(n, bounds, seed):
    """Latin hypercube sample of ``n`` points in the box ``bounds`` (2, d)."""
    bounds = np.asarray(bounds, dtype=float)
    u = qmc.LatinHypercube(d=bounds.shape[1], seed=np.random.default_rng(seed)).random(n)
    return qmc.scale(u, bounds[0], bounds[1])


def simulate(spec, X, seed, stream):
    """One simulator draw per row of ``X`` from per-row seeds."""
    seeds = draw_seeds(seed, X.shape[0], stream)
    if spec.simulator == "herbie":
        noise = np.array([np.random.default_rng(s).standard_normal() for s in seeds])
        return herbie_mean(X) + spec.noise_sd * noise
    return sir_batch(X, seeds, spec.sir)


def make_design(spec):
    """LHS unique sites with replicated simulator draws, as a :class:`RawDesign`."""
    Xbar = lhs(spec.n_unique, spec.bounds, [spec.seed, 1])
    if spec.replication == "fixed":
        A = np.full(spec.n_unique, spec.a)
    else:
        A = np.random.default_rng([spec.seed, 2]).integers(1, spec.a + 1, size=spec.n_unique)
    X = np.repeat(Xbar, A, axis=0)
    return RawDesign(X, simulate(spec, X, spec.seed, 3))


def make_test(spec):
    """Test sites, one noisy response each, and the noise-free truth when known."""
    X = lhs(spec.n_test, spec.bounds, [spec.seed, 4])
    y = simulate(spec, X, spec.seed, 5)
    truth = herbie_mean(X) if spec.simulator == "herbie" else None
    return X, y, truth


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    score: float
    wall_time: float = 0.0

    def __post_init__(self):
        if not self.rmse >= 0:
            raise InputError("rmse must be non-negative")

    def to_dict(self):
        return {"rmse": self.rmse, "score": self.score, "wall_time": self.wall_time}


def metrics(mu, sigma2, y_test, f_truth=None, log_variance=False, wall_time=0.0):
    """Root mean squared error and the Gaussian scoring rule.

    RMSE is against ``f_truth`` when given, otherwise against ``y_test``.  The
    score is ``-sum((mu - y)^2 / sigma2) - sum(sigma2)``; with
    ``log_variance=True`` the last sum uses ``log(sigma2)`` instead.
    """
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    y = np.asarray(y_test, dtype=float)
    if not (mu.shape == sigma2.shape == y.shape):
        raise InputError("mu, sigma2 and y_test must have equal length")
    if np.any(sigma2 <= 0):
        raise InputError("sigma2 must be positive")
    target = y if f_truth is None else np.asarray(f_truth, dtype=float)
    if target.shape != mu.shape:
        raise InputError("f_truth must match mu in length")
    rmse = float(np.sqrt(np.mean((mu - target) ** 2)))
    penalty = np.log(sigma2) if log_variance else sigma2
    score = float(-np.sum((mu - y) ** 2 / sigma2) - np.sum(penalty))
    return MetricReport(rmse, score, wall_time)


def binned_variances(X, values, bounds, bins=5):
    """Mean of ``values`` within each cell of a ``bins x bins`` grid; NaN if empty."""
    X = np.atleast_2d(X)
    lo, hi = np.asarray(bounds, dtype=float)
    cell = np.clip(((X - lo) / (hi - lo) * bins).astype(int), 0, bins - 1)
    flat = cell[:, 0] * bins + cell[:, 1]
    sums = np.bincount(flat, weights=values, minlength=bins * bins)
    counts = np.bincount(flat, minlength=bins * bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts


def replicate_variances(raw):
    """Unique inputs with at least two replicates and their sample variances."""
    des = compress(raw)
    keep = des.A >= 2
    A = des.A[keep].astype(float)
    var = (des.S[keep] - A * des.Ybar[keep] ** 2) / (A - 1.0)
    return des.Xbar[keep], np.maximum(var, 0.0)


def run_benchmark(spec, cfg, prescale=None, dense_subset=None, log_variance=False):
    """Generate data, fit LIGP and score the predictions.

    Returns a dict with the design, test data, the :class:`PredictionBatch`
    and the :class:`MetricReport`; with ``dense_subset`` set, also the metrics
    of a dense GP fitted to that many randomly chosen unique inputs.
    """
    from ligp.dense import fit_dense_gp
    from ligp.model import LigpSurrogate

    raw = make_design(spec)
    Xt, yt, truth = make_test(spec)
    t0 = time.perf_counter()
    sur = LigpSurrogate(raw, cfg, prescale=prescale)
    batch = sur.predict(Xt)
    wall = time.perf_counter() - t0
    report = metrics(batch.mu, batch.sigma2, yt, truth, log_variance, wall)
    out = dict(design=raw, X_test=Xt, y_test=yt, truth=truth, batch=batch, metrics=report)
    if dense_subset:
        des = compress(raw)
        rng = np.random.default_rng([spec.seed, 6])
        idx = np.sort(rng.choice(des.nbar, size=min(dense_subset, des.nbar), replace=False))
        sub = des.subset(idx)
        offset = float(np.sum(sub.A * sub.Ybar) / sub.n_total)
        sub = sub.shift_response(offset)
        gp = fit_dense_gp(sub.Xbar, sub.Ybar, sub.A, sub.S)
        mu, s2 = gp.predict(Xt)
        out["dense_metrics"] = metrics(mu + offset, s2, yt, truth, log_variance)
    return out
