import numpy as np
from scipy.optimize import rosen, rosen_der

from ligp.optimize import minimize_box


def _quadratic(centers):
    def fun(x, rows):
        r = x - centers[rows]
        return np.sum(r**2 * [1.0, 10.0], axis=1), 2 * r * [1.0, 10.0]
    return fun


def test_unconstrained_quadratic():
    c = np.array([[0.3, -0.2], [1.0, 2.0]])
    res = minimize_box(_quadratic(c), np.zeros((2, 2)), -5.0, 5.0)
    assert res["converged"].all()
    assert np.allclose(res["x"], c, atol=1e-6)


def test_active_bounds():
    c = np.array([[3.0, -3.0]])
    res = minimize_box(_quadratic(c), np.zeros((1, 2)), -1.0, 1.0)
    assert np.allclose(res["x"], [[1.0, -1.0]])
    assert res["converged"].all()


def test_rows_do_not_interact():
    c = np.array([[0.5, 0.5], [-2.0, 1.0], [4.0, -4.0]])
    x0 = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    full = minimize_box(_quadratic(c), x0, -3.0, 3.0)
    solo = minimize_box(_quadratic(c[1:2]), x0[1:2], -3.0, 3.0)
    assert np.array_equal(full["x"][1], solo["x"][0])
    assert full["iterations"][1] == solo["iterations"][0]


def test_rosenbrock():
    def fun(x, rows):
        return np.array([rosen(r) for r in x]), np.array([rosen_der(r) for r in x])
    res = minimize_box(fun, np.array([[-1.2, 1.0]]), -2.0, 2.0, maxiter=500, gtol=1e-8)
    assert np.allclose(res["x"], [[1.0, 1.0]], atol=1e-4)


def test_infinite_start_is_left_alone():
    def fun(x, rows):
        f = np.where(x[:, 0] > 0, np.sum(x**2, axis=1), np.inf)
        return f, 2 * x
    res = minimize_box(fun, np.array([[-1.0], [1.0]]), -2.0, 2.0)
    assert not np.isfinite(res["f"][0]) and not res["converged"][0]
    assert res["converged"][1]
