import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ligp.design import RawDesign, compress
from ligp.errors import InputError
from ligp.neighborhood import (SpatialIndex, brute_force_neighbors, build_index,
                               neighborhood)


def test_matches_brute_force(rng):
    Xbar = rng.uniform(size=(1000, 3))
    index = SpatialIndex(Xbar)
    Q = rng.uniform(size=(50, 3))
    idx, d2 = index.query(Q, 25)
    for q in range(50):
        assert np.array_equal(idx[q], brute_force_neighbors(Xbar, Q[q], 25))
    assert np.all(np.diff(d2, axis=1) >= 0)


@given(st.integers(0, 10_000), st.integers(1, 16))
def test_ties_broken_by_index(seed, k):
    # integer grid with heavy distance ties
    rng = np.random.default_rng(seed)
    Xbar = rng.permutation(np.array([[i, j] for i in range(4) for j in range(4)], dtype=float))
    x = rng.integers(0, 4, size=2).astype(float) + 0.5 * rng.integers(0, 2)
    idx, _ = SpatialIndex(Xbar).query(x, k)
    assert np.array_equal(idx[0], brute_force_neighbors(Xbar, x, k))


def test_neighborhood_counts_replicates():
    X = np.array([[0.0], [0.0], [1.0], [5.0]])
    des = compress(RawDesign(X, np.arange(4.0)))
    nb = neighborhood(build_index(des), des, [0.2], 2)
    assert nb.indices.tolist() == [0, 1]
    assert nb.n_local == 3 and nb.nbar == 2
    assert nb.sqdist.tolist() == pytest.approx([0.04, 0.64])


def test_neighborhood_rejects_bad_size():
    des = compress(RawDesign(np.array([[0.0], [1.0]]), np.zeros(2)))
    index = build_index(des)
    with pytest.raises(InputError):
        neighborhood(index, des, [0.0], 3)
    with pytest.raises(InputError):
        neighborhood(index, des, [0.0], 0)
    with pytest.raises(InputError):
        index.query(np.zeros((1, 2)), 1)
