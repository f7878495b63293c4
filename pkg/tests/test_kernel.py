import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ligp.errors import InputError, NumericalError
from ligp.kernel import (JitterPolicy, batch_factor, chol_inverse, chol_logdet, chol_solve,
                         cross_matrix, kernel, sqdist, stable_factor)

coords = arrays(np.float64, (3,), elements=st.floats(-5, 5))


def test_kernel_hand_values():
    assert kernel([0.0, 0.0], [0.0, 0.0], 1.0) == 1.0
    assert kernel([1.0], [0.0], 1.0) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert kernel([1.0, 1.0], [0.0, 0.0], 0.5) == pytest.approx(np.exp(-4.0), rel=1e-15)


@given(coords, coords, st.floats(1e-3, 1e3))
def test_kernel_symmetric_and_bounded(x, y, theta):
    k = kernel(x, y, theta)
    assert k == kernel(y, x, theta)
    assert 0.0 <= k <= 1.0


def test_kernel_rejects_bad_input():
    with pytest.raises(InputError):
        kernel([0.0, 1.0], [0.0], 1.0)
    with pytest.raises(InputError):
        kernel([0.0], [1.0], 0.0)
    with pytest.raises(InputError):
        cross_matrix(np.zeros((2, 2)), np.zeros((2, 3)), 1.0)


def test_sqdist_exact_zero_for_identical_rows(rng):
    X = rng.normal(size=(6, 3)) * 1e3
    D = sqdist(X, X)
    assert np.all(np.diag(D) == 0.0)
    assert np.allclose(D, D.T)


def test_cross_matrix_matches_scalar_kernel(rng):
    A, B = rng.uniform(size=(4, 2)), rng.uniform(size=(3, 2))
    K = cross_matrix(A, B, 0.3)
    for i in range(4):
        for j in range(3):
            assert K[i, j] == pytest.approx(kernel(A[i], B[j], 0.3), rel=1e-14)


def test_stable_factor_escalates_jitter():
    M = np.ones((3, 3))  # rank one
    L, eps = stable_factor(M, JitterPolicy(eps_K=1e-12, growth_factor=1e3, max_attempts=4))
    assert eps >= 1e-12
    assert np.allclose(L @ L.T, M + eps * np.eye(3))


def test_stable_factor_failure_reports_diagnostics():
    M = -np.eye(2)
    with pytest.raises(NumericalError) as info:
        stable_factor(M, JitterPolicy(max_attempts=2))
    assert "condition_number" in info.value.diagnostics
    with pytest.raises(InputError):
        stable_factor(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(InputError):
        stable_factor(np.array([[np.nan]]))


def test_batch_factor_marks_failures_without_raising():
    M = np.stack([np.eye(2), -np.eye(2)])
    L, eps, ok = batch_factor(M, JitterPolicy(max_attempts=2))
    assert ok.tolist() == [True, False]
    assert np.allclose(L[0] @ L[0].T, np.eye(2) * (1 + eps[0]))


def test_cholesky_helpers(rng):
    A = rng.normal(size=(5, 4, 4))
    M = A @ np.swapaxes(A, 1, 2) + 4 * np.eye(4)
    L = np.linalg.cholesky(M)
    assert np.allclose(chol_logdet(L), np.linalg.slogdet(M)[1])
    assert np.allclose(chol_inverse(L), np.linalg.inv(M))
    b = rng.normal(size=(5, 4, 1))
    assert np.allclose(chol_solve(L, b), np.linalg.solve(M, b))


def test_jitter_policy_validation():
    with pytest.raises(InputError):
        JitterPolicy(eps_K=0.0)
    with pytest.raises(InputError):
        JitterPolicy(growth_factor=1.0)
    with pytest.raises(InputError):
        JitterPolicy().start("Z")
