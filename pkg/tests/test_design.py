import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ligp.design import (PrescaleTransform, RawDesign, apply_prescale, compress, fit_prescale,
                         invert_prescale, read_csv, read_sites_csv, write_csv)
from ligp.errors import FittingError, InputError


def test_compress_hand_example():
    X = np.array([[1.0], [0.0], [1.0], [1.0]])
    Y = np.array([2.0, 5.0, 4.0, 6.0])
    des = compress(RawDesign(X, Y))
    assert des.Xbar.tolist() == [[0.0], [1.0]]
    assert des.A.tolist() == [1, 3]
    assert des.Ybar.tolist() == [5.0, 4.0]
    assert des.S.tolist() == [25.0, 56.0]
    assert des.n_total == 4 and des.nbar == 2


@given(st.lists(st.integers(0, 4), min_size=1, max_size=30),
       st.lists(st.floats(-100, 100), min_size=30, max_size=30))
def test_compress_preserves_totals(labels, ys):
    X = np.array(labels, dtype=float)[:, None]
    Y = np.array(ys[: len(labels)])
    des = compress(RawDesign(X, Y))
    assert des.n_total == len(labels)
    assert np.sum(des.A * des.Ybar) == pytest.approx(Y.sum(), abs=1e-9)
    assert des.S.sum() == pytest.approx(np.sum(Y**2), rel=1e-12, abs=1e-9)
    assert np.all(des.S - des.A * des.Ybar**2 >= -1e-8 * (1 + des.S))


def test_compress_tolerance_merges_near_duplicates():
    X = np.array([[0.0, 0.0], [1e-9, 0.0], [1.0, 1.0]])
    assert compress(RawDesign(X, np.zeros(3))).nbar == 3
    assert compress(RawDesign(X, np.zeros(3)), tol=1e-6).nbar == 2
    with pytest.raises(InputError):
        compress(RawDesign(X, np.zeros(3)), tol=-1.0)


def test_shift_response_matches_recompression(rng):
    X = np.repeat(rng.uniform(size=(5, 2)), 3, axis=0)
    Y = rng.normal(size=15)
    des = compress(RawDesign(X, Y)).shift_response(0.7)
    ref = compress(RawDesign(X, Y - 0.7))
    assert np.allclose(des.Ybar, ref.Ybar)
    assert np.allclose(des.S, ref.S)


def test_raw_design_validation():
    with pytest.raises(InputError):
        RawDesign(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(InputError):
        RawDesign(np.array([[np.inf]]), np.zeros(1))


def test_csv_round_trip(tmp_path, rng):
    raw = RawDesign(rng.uniform(size=(7, 3)), rng.normal(size=7))
    path = tmp_path / "d.csv"
    write_csv(path, raw)
    back = read_csv(path)
    assert np.array_equal(back.X, raw.X) and np.array_equal(back.Y, raw.Y)
    assert np.array_equal(read_sites_csv(path), raw.X)


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,x2\n0,1\n")
    with pytest.raises(InputError, match="missing column 'y'"):
        read_csv(p)
    p.write_text("x1,y\n0,abc\n")
    with pytest.raises(InputError, match=":2"):
        read_csv(p)
    p.write_text("x2,y\n0,1\n")
    with pytest.raises(InputError):
        read_csv(p)


def test_prescale_recovers_anisotropy(rng):
    X = rng.uniform(size=(150, 2))
    Y = np.sin(6 * X[:, 0]) + 0.05 * X[:, 1] + rng.normal(scale=0.01, size=150)
    t = fit_prescale(RawDesign(X, Y), subset_size=150, seed=1)
    # the flat direction gets a much longer lengthscale
    assert t.divisors[1] > 3 * t.divisors[0]
    Z = apply_prescale(t, X)
    assert np.allclose(invert_prescale(t, Z), X)


def test_prescale_errors():
    with pytest.raises(FittingError):
        fit_prescale(RawDesign(np.array([[0.0], [1.0]]), np.array([1.0, 1.0])))
    with pytest.raises(InputError):
        PrescaleTransform(np.array([1.0, 0.0]))
    with pytest.raises(InputError):
        apply_prescale(PrescaleTransform.identity(2), np.zeros((1, 3)))
