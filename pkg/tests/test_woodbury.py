import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ligp import oracle
from ligp.design import RawDesign, compress
from ligp.errors import InputError
from ligp.kernel import JitterPolicy
from ligp.selfcheck import compare, random_instance
from ligp.woodbury import (GammaPrior, audit_shapes, build_system, concentrated_nll,
                           concentrated_nll_grad, fit_hyperparams, inverse_action, log_det_sigma,
                           predict, tau2_decomposition, tau2_mle)

TIGHT = JitterPolicy(eps_K=1e-8, eps_Q=1e-14)


@given(st.integers(0, 2**31 - 1))
def test_woodbury_matches_dense(seed):
    inst = random_instance(np.random.default_rng(seed))
    for name, (a, r, ok) in compare(inst, TIGHT).items():
        assert ok, f"{name}: abs {a:.2e} rel {r:.2e}"


def test_mixed_replication_instance():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, force_mixed=True)
    assert inst.design.A.min() == 1 and inst.design.A.max() >= 2
    assert all(ok for _, _, ok in compare(inst, TIGHT).values())


def _small(rng, nbar=12, reps=3, d=2, m=4):
    Xbar = rng.uniform(size=(nbar, d))
    X = np.repeat(Xbar, reps, axis=0)
    Y = np.cos(4 * X[:, 0]) + X[:, 1] + rng.normal(scale=0.2, size=X.shape[0])
    des = compress(RawDesign(X, Y))
    Psi = rng.uniform(size=(m, d))
    return des, np.arange(des.nbar), Psi


def test_unreplicated_tau2_correction_vanishes(rng):
    des, neigh, Psi = _small(rng, reps=1)
    sys = build_system(des, neigh, Psi, 0.4, 0.1, TIGHT)
    t_hat, t_bar, corr = tau2_decomposition(sys)
    assert corr == 0.0
    assert t_hat == pytest.approx(tau2_mle(sys), rel=1e-10)


def test_replicated_tau2_decomposition(rng):
    des, neigh, Psi = _small(rng, reps=4)
    sys = build_system(des, neigh, Psi, 0.4, 0.1, TIGHT)
    t_hat, _, corr = tau2_decomposition(sys)
    assert corr != 0.0
    assert t_hat == pytest.approx(tau2_mle(sys), rel=1e-9)


def test_inverse_action_and_logdet(rng):
    des, neigh, Psi = _small(rng)
    sys = build_system(des, neigh, Psi, 0.3, 0.05, TIGHT)
    X = np.repeat(des.Xbar, des.A, axis=0)
    R = oracle.dense_sigma(X, Psi, 0.3, 0.05, TIGHT.eps_K)
    v = rng.normal(size=X.shape[0])
    assert np.allclose(inverse_action(sys, v), np.linalg.solve(R, v), rtol=1e-9, atol=1e-10)
    assert log_det_sigma(sys, 2.0) == pytest.approx(np.linalg.slogdet(2.0 * R)[1], rel=1e-10)
    with pytest.raises(InputError):
        inverse_action(sys, v[:-1])


def test_gradient_matches_finite_differences(rng):
    des, neigh, Psi = _small(rng)
    prior = GammaPrior(1.5)
    theta, g = 0.35, 0.08
    kw = dict(theta_prior=prior, g_prior=prior, theta_anchor=0.5, g_anchor=0.1)
    dt, dg = concentrated_nll_grad(des, neigh, Psi, theta, g, TIGHT, **kw)
    h = 1e-6
    f = lambda t, gg: concentrated_nll(des, neigh, Psi, t, gg, TIGHT, **kw)  # noqa: E731
    fd_t = (f(theta + h, g) - f(theta - h, g)) / (2 * h)
    fd_g = (f(theta, g + h) - f(theta, g - h)) / (2 * h)
    assert dt == pytest.approx(fd_t, rel=1e-5, abs=1e-6)
    assert dg == pytest.approx(fd_g, rel=1e-5, abs=1e-6)


def test_fit_reaches_stationary_point(rng):
    des, neigh, Psi = _small(rng, nbar=20)
    fit = fit_hyperparams(des, neigh, Psi, (0.2, 0.1), ((0.002, 20.0), (1e-8, 10.0)),
                          policy=TIGHT)
    assert fit.converged
    p = fit.params
    dt, dg = concentrated_nll_grad(des, neigh, Psi, p.theta, p.g, TIGHT)
    # gradient in log coordinates vanishes at an interior optimum
    assert abs(p.theta * dt) < 1e-3 and abs(p.g * dg) < 1e-3
    sys = build_system(des, neigh, Psi, p.theta, p.g, TIGHT)
    mu, s2 = predict(fit, sys, des.Xbar[0])
    assert np.isfinite(mu) and s2 > 0


def test_fit_rejects_bad_bounds(rng):
    des, neigh, Psi = _small(rng)
    with pytest.raises(InputError):
        fit_hyperparams(des, neigh, Psi, (0.2, 0.1), ((1.0, 0.1), (1e-8, 1.0)))
    with pytest.raises(InputError):
        fit_hyperparams(des, neigh, Psi, (5.0, 0.1), ((0.1, 1.0), (1e-8, 1.0)))


def test_no_n_by_n_matrices(rng):
    # replicate counts make n = 240 while nbar = 20 and m = 5
    Xbar = rng.uniform(size=(20, 2))
    X = np.repeat(Xbar, 12, axis=0)
    des = compress(RawDesign(X, rng.normal(size=X.shape[0])))
    Psi = rng.uniform(size=(5, 2))
    with audit_shapes() as shapes:
        build_system(des, np.arange(20), Psi, 0.3, 0.1)
        concentrated_nll_grad(des, np.arange(20), Psi, 0.3, 0.1)
    assert shapes
    assert all(max(s, default=0) <= 20 for _, s in shapes)


def test_gamma_prior_mode():
    p = GammaPrior(1.5)
    xs = np.linspace(0.1, 3.0, 2901)
    assert xs[np.argmin(p.penalty(xs, 0.7))] == pytest.approx(0.7, abs=1e-3)
    assert p.d_penalty(0.7, 0.7) == pytest.approx(0.0, abs=1e-12)
