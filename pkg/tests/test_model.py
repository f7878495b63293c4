import warnings

import numpy as np
import pytest

from ligp.dense import DenseGP
from ligp.design import RawDesign, compress
from ligp.errors import InputError
from ligp.kernel import JitterPolicy
from ligp.model import (LigpConfig, LigpSurrogate, default_m, fit_predict_site,
                        nugget_init_batch, predict_batch, prepare, run_sites, theta_init)
from ligp.neighborhood import build_index
from ligp.templates import InducingSet
from ligp.woodbury import build_system, predict


def _replicated(rng, nbar=60, reps=3, d=2, noise=0.1):
    Xbar = rng.uniform(size=(nbar, d))
    X = np.repeat(Xbar, reps, axis=0)
    Y = np.sin(5 * X[:, 0]) * np.cos(3 * X[:, -1]) + rng.normal(scale=noise, size=X.shape[0])
    return RawDesign(X, Y)


def test_default_m():
    assert [default_m(d) for d in (1, 2, 3, 4, 5, 8)] == [10, 10, 20, 30, 30, 30]


def test_theta_init_hand_example():
    # squared distances 1, 4, 9, 1, 4, 1: the 10% quantile is 1
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    assert theta_init(X) == pytest.approx(1.0)
    with pytest.raises(InputError):
        theta_init(np.zeros((1, 2)))


def test_nugget_init():
    # two sites, replicate spread 1 on each, means 0 and 10
    A = np.array([[2.0, 2.0]])
    Ybar = np.array([[0.0, 10.0]])
    S = np.array([[2.0, 202.0]])
    within = 4.0 / 2.0
    total = (204.0 - 4 * 25.0) / 3.0
    r = within / total
    assert nugget_init_batch(A, Ybar, S)[0] == pytest.approx(r / (1 - r))
    # no replicates: fallback
    assert nugget_init_batch(np.ones((1, 2)), Ybar, Ybar**2, 0.3)[0] == 0.3


def test_config_validation():
    with pytest.raises(InputError):
        LigpConfig(nbar=0)
    with pytest.raises(InputError):
        LigpConfig(template="grid")
    with pytest.raises(InputError):
        LigpConfig(g_bounds=(1.0, 0.5))
    cfg = LigpConfig(m=7)
    assert cfg.resolved_m(5) == 7 and LigpConfig().resolved_m(3) == 20
    assert cfg.to_dict()["m"] == 7


def test_full_inducing_set_reproduces_dense_gp(rng):
    # with the inducing points at every unique input, the local model is the
    # exact GP on all n replicated observations
    raw = _replicated(rng, nbar=15, reps=2, d=2)
    des = compress(raw)
    theta, g = 0.3, 0.05
    sys = build_system(des, np.arange(des.nbar), des.Xbar, theta, g,
                       JitterPolicy(eps_K=1e-10, eps_Q=1e-14))
    assert np.allclose(sys.omega, g, atol=1e-6)
    gp = DenseGP(des.Xbar, des.Ybar, des.A.astype(float), np.array([theta]), g, 1.0, 0.0)
    gp._prep()
    resid = des.S.sum() - np.dot(des.A * des.Ybar, des.Ybar)
    gp.tau2 = float((resid / g + des.Ybar @ gp._alpha) / des.n_total)
    for x in rng.uniform(size=(5, 2)):
        mu, s2 = predict(None, sys, x)
        dmu, ds2 = gp.predict(x)
        assert mu == pytest.approx(dmu[0], rel=1e-5, abs=1e-6)
        assert s2 == pytest.approx(ds2[0], rel=1e-5)


def test_predictions_are_sensible(rng):
    raw = _replicated(rng, nbar=300, reps=2, noise=0.05)
    sites = rng.uniform(0.1, 0.9, size=(40, 2))
    out = predict_batch(raw, sites, LigpConfig(nbar=40, m=8))
    truth = np.sin(5 * sites[:, 0]) * np.cos(3 * sites[:, 1])
    assert out.n_fallback == 0
    assert np.sqrt(np.mean((out.mu - truth) ** 2)) < 0.05
    assert np.all(out.sigma2 > 0)
    assert np.median(out.noise_variance) == pytest.approx(0.05**2, rel=0.6)


def test_response_scale_equivariance(rng):
    raw = _replicated(rng, nbar=120, reps=2)
    sites = rng.uniform(size=(10, 2))
    cfg = LigpConfig(nbar=30, m=6)
    a = predict_batch(raw, sites, cfg)
    b = predict_batch(RawDesign(raw.X, 10.0 * raw.Y + 3.0), sites, cfg)
    assert np.allclose(b.mu, 10.0 * a.mu + 3.0, rtol=1e-5, atol=1e-5)
    assert np.allclose(b.sigma2, 100.0 * a.sigma2, rtol=1e-4)
    assert np.allclose(b.theta, a.theta, rtol=1e-4)


def test_deterministic_and_worker_invariant(rng):
    raw = _replicated(rng, nbar=150, reps=2)
    sites = rng.uniform(size=(50, 2))
    cfg = LigpConfig(nbar=25, m=6, chunk_size=16)
    state = prepare(compress(raw), cfg)
    one = run_sites(state, sites, workers=1)
    two = run_sites(state, sites, workers=2)
    again = run_sites(prepare(compress(raw), cfg), sites, workers=1)
    for name in ("mu", "sigma2", "theta", "g"):
        assert np.array_equal(getattr(one, name), getattr(two, name))
        assert np.array_equal(getattr(one, name), getattr(again, name))


def test_single_site_matches_batch(rng):
    raw = _replicated(rng, nbar=100, reps=2)
    cfg = LigpConfig(nbar=20, m=5)
    state = prepare(compress(raw), cfg)
    x = np.array([0.4, 0.6])
    batch = run_sites(state, x[None])
    des = compress(raw)
    mu, s2, diag = fit_predict_site(des, build_index(des), state.template, x, cfg)
    assert mu == pytest.approx(batch.mu[0], rel=1e-10)
    assert s2 == pytest.approx(batch.sigma2[0], rel=1e-10)
    assert np.allclose(diag["inducing_points"][-1], x)


def test_fixed_theta_and_nugget(rng):
    raw = _replicated(rng, nbar=80, reps=2)
    out = predict_batch(raw, rng.uniform(size=(5, 2)),
                        LigpConfig(nbar=20, m=5, theta=0.2, estimate_nugget=False, g_fixed=1e-3))
    assert np.all(out.theta == 0.2) and np.all(out.g == 1e-3)


def test_wimse_template_path(rng):
    raw = _replicated(rng, nbar=80, reps=2)
    out = predict_batch(raw, rng.uniform(size=(5, 2)),
                        LigpConfig(nbar=20, m=4, template="wimse", wimse_multistart=3))
    assert out.n_fallback == 0


def test_nbar_clamped_with_warning(rng):
    raw = _replicated(rng, nbar=12, reps=2)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = predict_batch(raw, rng.uniform(size=(3, 2)), LigpConfig(nbar=50, m=5))
    assert any("clamping" in str(x.message) for x in w)
    assert np.all(np.isfinite(out.mu))


def test_degenerate_site_falls_back(rng):
    # constant responses give a zero quadratic form
    X = np.repeat(rng.uniform(size=(20, 1)), 2, axis=0)
    out = predict_batch(RawDesign(X, np.full(40, 2.5)), np.array([[0.5]]),
                        LigpConfig(nbar=10, m=3))
    assert out.status[0] == "fallback"
    assert out.mu[0] == 2.5 and out.sigma2[0] > 0


def test_surrogate_with_prescale(rng):
    raw = _replicated(rng, nbar=150, reps=2)
    X = raw.X * np.array([10.0, 1.0])
    sur = LigpSurrogate(RawDesign(X, raw.Y), LigpConfig(nbar=30, m=6), prescale=100)
    sites = rng.uniform(size=(8, 2)) * np.array([10.0, 1.0])
    out = sur.predict(sites)
    assert np.array_equal(out.sites, sites)
    assert out.n_fallback == 0
    with pytest.raises(InputError):
        sur.predict(np.zeros((1, 3)))


def test_template_dimension_checked(rng):
    raw = _replicated(rng, nbar=30, reps=1)
    with pytest.raises(InputError):
        InducingSet(np.zeros((3, 2)), np.zeros(3))
    state = prepare(compress(raw), LigpConfig(nbar=10, m=3))
    with pytest.raises(InputError):
        run_sites(state, np.zeros((1, 3)))
