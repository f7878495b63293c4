"""Consistency checks of the sufficient-statistic route against dense algebra.

:func:`random_instance` draws small replicated problems; :func:`compare`
evaluates every quantity both ways.  Instances are drawn with ``K_m``
condition numbers below ``max_cond`` so that the dense reference itself is
accurate to the tolerances being checked.
"""

from dataclasses import dataclass

import numpy as np

from ligp import oracle
from ligp.design import RawDesign, compress
from ligp.kernel import JitterPolicy, cross_matrix
from ligp.woodbury import (build_system, concentrated_nll, inverse_action, log_det_sigma,
                           predict, quad_form, tau2_decomposition, tau2_mle)

ABS_TOL = 1e-8
REL_TOL = 1e-9


@dataclass
class Instance:
    X: np.ndarray
    Y: np.ndarray
    Psi: np.ndarray
    theta: float
    g: float
    xprime: np.ndarray

    @property
    def design(self):
        return compress(RawDesign(self.X, self.Y))


def random_instance(rng, max_n=40, max_m=5, max_a=4, max_d=3, max_cond=1e4,
                    force_mixed=False):
    """A random replicated problem with a well-conditioned inducing set."""
    while True:
        d = int(rng.integers(1, max_d + 1))
        m = int(rng.integers(1, max_m + 1))
        nbar = int(rng.integers(2, max_n // 2 + 1))
        A = rng.integers(1, max_a + 1, size=nbar)
        if force_mixed:
            A[0] = 1
            A[-1] = max(A[-1], 2)
        while A.sum() > max_n:
            j = int(np.argmax(A))
            A[j] -= 1
        theta = float(rng.uniform(0.05, 1.0))
        Psi = rng.uniform(size=(m, d))
        if np.linalg.cond(cross_matrix(Psi, Psi, theta)) > max_cond:
            continue
        Xbar = rng.uniform(size=(nbar, d))
        X = np.repeat(Xbar, A, axis=0)
        Y = np.sin(3.0 * X.sum(axis=1)) + rng.normal(scale=0.3, size=X.shape[0])
        g = float(rng.uniform(0.01, 1.0))
        return Instance(X, Y, Psi, theta, g, rng.uniform(size=d))


def _close(a, b):
    """Max absolute error, max relative error and whether either meets tolerance."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    abs_err = np.abs(a - b)
    rel_err = abs_err / np.maximum(np.abs(b), np.finfo(float).tiny)
    ok = np.all((abs_err <= ABS_TOL) | (rel_err <= REL_TOL))
    return float(abs_err.max()), float(rel_err.max()), bool(ok)


def compare(inst, policy=JitterPolicy(eps_K=1e-8, eps_Q=1e-14), rng=None):
    """Woodbury vs dense results for one instance: name -> (abs, rel, ok)."""
    rng = rng or np.random.default_rng(0)
    des = inst.design
    # the design's compressed order groups replicates in blocks
    X = np.repeat(des.Xbar, des.A, axis=0)
    order = np.lexsort(inst.X.T[::-1])
    Y = inst.Y[order]
    neigh = np.arange(des.nbar)
    eK = policy.eps_K
    sys = build_system(des, neigh, inst.Psi, inst.theta, inst.g, policy)
    tau2 = float(rng.uniform(0.5, 2.0))
    out = {}
    out["log_det"] = _close(log_det_sigma(sys, tau2),
                            oracle.dense_logdet(X, inst.Psi, inst.theta, inst.g, tau2, eK))
    v = rng.normal(size=X.shape[0])
    R = oracle.dense_sigma(X, inst.Psi, inst.theta, inst.g, eK)
    out["inverse_action"] = _close(inverse_action(sys, v), np.linalg.solve(R, v))
    out["neg2loglik"] = _close(log_det_sigma(sys, tau2) + quad_form(sys) / tau2,
                               oracle.dense_neg2loglik(X, Y, inst.Psi, inst.theta, inst.g,
                                                       tau2, eK))
    theta2, g2 = inst.theta * 1.3, inst.g * 0.7
    diff = (concentrated_nll(des, neigh, inst.Psi, theta2, g2, policy)
            - concentrated_nll(des, neigh, inst.Psi, inst.theta, inst.g, policy))
    dense_diff = (oracle.dense_concentrated(X, Y, inst.Psi, theta2, g2, eK)
                  - oracle.dense_concentrated(X, Y, inst.Psi, inst.theta, inst.g, eK))
    out["likelihood_difference"] = _close(diff, dense_diff)
    out["tau2"] = _close(tau2_mle(sys), oracle.dense_quad(X, Y, inst.Psi, inst.theta, inst.g,
                                                          eK) / X.shape[0])
    mu, s2 = predict(None, sys, inst.xprime)
    dmu, ds2 = oracle.dense_predict(X, Y, inst.Psi, inst.theta, inst.g, eK, inst.xprime)
    out["predictive_mean"] = _close(mu, dmu)
    out["predictive_variance"] = _close(s2, ds2)
    t_hat, _, _ = tau2_decomposition(sys)
    out["tau2_decomposition"] = _close(t_hat, tau2_mle(sys))
    return out


def run_selfcheck(n_instances=20, seed=0):
    """Worst-case errors over random instances: name -> (max error, all ok)."""
    rng = np.random.default_rng(seed)
    report = {}
    for _ in range(n_instances):
        res = compare(random_instance(rng), rng=rng)
        for name, (a, r, ok) in res.items():
            err, all_ok = report.get(name, (0.0, True))
            report[name] = (max(err, min(a, r)), all_ok and ok)
    return report
