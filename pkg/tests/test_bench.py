import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ligp.bench import (BenchmarkSpec, SirParams, binned_variances, draw_seeds, herbie_mean,
                        herbie_sample, herbie_w, lhs, make_design, make_test, metrics,
                        replicate_variances, run_benchmark, sir_batch, sir_sample)
from ligp.design import RawDesign, compress
from ligp.errors import InputError
from ligp.model import LigpConfig

# 30-digit references
W1 = 1.01151634433377810248953269655
W0 = 0.781340600743687774944267424648
F00 = -0.610493134370506905128309258871
F_HALF = -0.999532919305767390127266743632  # f(0.5, -1.2)


def test_herbie_reference_values():
    assert herbie_w(1.0) == pytest.approx(W1, rel=1e-14)
    assert herbie_w(0.0) == pytest.approx(W0, rel=1e-14)
    assert herbie_mean([0.0, 0.0]) == pytest.approx(F00, rel=1e-14)
    assert herbie_mean([0.5, -1.2]) == pytest.approx(F_HALF, rel=1e-14)
    with pytest.raises(InputError):
        herbie_mean([0.0, 0.0, 0.0])


def test_herbie_noise():
    draws = np.array([herbie_sample([0.0, 0.0], s) for s in range(4000)])
    assert draws.std() == pytest.approx(0.02, rel=0.05)
    assert draws.mean() == pytest.approx(F00, abs=3 * 0.02 / np.sqrt(4000))
    assert herbie_sample([0.0, 0.0], 7) == herbie_sample([0.0, 0.0], 7)
    assert herbie_sample([0.0, 0.0], 7, noise_sd=0.0) == herbie_mean([0.0, 0.0])


def test_sir_no_infection_means_zero():
    assert sir_sample([1.0, 0.0], 3) == 0.0
    assert sir_sample([0.5, 0.0], 3) == 0.0


def test_sir_deterministic_and_seed_sensitive():
    x = np.array([[0.6, 0.1]] * 3)
    a = sir_batch(x, [1, 2, 3])
    assert np.array_equal(a, sir_batch(x, [1, 2, 3]))
    assert len(set(a.tolist())) == 3
    assert np.all(a > 0)


def test_sir_recovery_only_mean():
    # with S0 = 0 every infected recovers at rate gamma: E[infected-days] = I0 / gamma
    p = SirParams(population=1000, beta=0.75, gamma=0.5, scale=1.0)
    x = np.array([[0.0, 0.02]] * 2000)
    vals = sir_batch(x, np.arange(2000), p)
    assert vals.mean() == pytest.approx(20 / 0.5, rel=0.03)


def test_sir_input_validation():
    with pytest.raises(InputError):
        sir_batch(np.array([[1.5, 0.0]]), [0])
    with pytest.raises(InputError):
        sir_batch(np.array([[0.5, 0.1]]), [0, 1])


def test_draw_seeds_streams():
    a = draw_seeds(0, 5, 1)
    assert np.array_equal(a, draw_seeds(0, 5, 1))
    assert not np.array_equal(a, draw_seeds(0, 5, 2))
    assert not np.array_equal(a, draw_seeds(1, 5, 1))


@given(st.integers(2, 50), st.integers(0, 1000))
def test_lhs_stratified(n, seed):
    X = lhs(n, np.array([[-2.0, 0.0], [2.0, 1.0]]), seed)
    for j, (lo, hi) in enumerate([(-2.0, 2.0), (0.0, 1.0)]):
        cells = np.floor((X[:, j] - lo) / (hi - lo) * n).astype(int)
        assert sorted(cells.tolist()) == list(range(n))


def test_design_replication_rules():
    fixed = make_design(BenchmarkSpec("herbie", n_unique=30, a=4, replication="fixed", seed=2))
    assert fixed.X.shape[0] == 120
    assert np.all(compress(fixed).A == 4)
    uni = compress(make_design(BenchmarkSpec("herbie", n_unique=300, a=10, seed=2)))
    assert uni.A.min() >= 1 and uni.A.max() <= 10 and uni.nbar == 300
    X, y, truth = make_test(BenchmarkSpec("herbie", n_test=50, seed=2))
    assert X.shape == (50, 2) and np.allclose(truth, herbie_mean(X))
    assert np.all(np.abs(y - truth) < 0.2)
    with pytest.raises(InputError):
        BenchmarkSpec("ocean")


def test_metrics_hand_example():
    rep = metrics([1.0, 2.0], [1.0, 4.0], [0.0, 4.0])
    assert rep.rmse == pytest.approx(np.sqrt(2.5))
    assert rep.score == pytest.approx(-(1.0 + 1.0) - 5.0)
    rep = metrics([1.0, 2.0], [1.0, 4.0], [0.0, 4.0], f_truth=[1.0, 2.0], log_variance=True)
    assert rep.rmse == 0.0
    assert rep.score == pytest.approx(-2.0 - np.log(4.0))
    with pytest.raises(InputError):
        metrics([1.0], [0.0], [1.0])


def test_binned_and_replicate_variances():
    X = np.array([[0.1, 0.1], [0.15, 0.1], [0.9, 0.9]])
    v = binned_variances(X, np.array([1.0, 3.0, 5.0]), np.array([[0.0, 0.0], [1.0, 1.0]]), 2)
    assert v[0] == 2.0 and v[3] == 5.0 and np.isnan(v[1])
    raw = RawDesign(np.array([[0.0], [0.0], [1.0]]), np.array([1.0, 3.0, 7.0]))
    Xr, var = replicate_variances(raw)
    assert Xr.tolist() == [[0.0]] and var.tolist() == [2.0]


def test_benchmark_smoke():
    spec = BenchmarkSpec("herbie", n_unique=200, a=3, n_test=100, seed=1)
    out = run_benchmark(spec, LigpConfig(nbar=30, m=6), dense_subset=100)
    assert out["batch"].n_fallback == 0
    assert out["metrics"].rmse < 0.1
    assert out["dense_metrics"].rmse < 0.1
