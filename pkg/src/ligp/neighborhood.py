"""Exact nearest-neighbor neighborhoods over unique design inputs."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ligp.errors import InputError


@dataclass(frozen=True)
class LocalNeighborhood:
    """The ``nbar`` unique inputs closest to a prediction site.

    ``indices`` index rows of the parent :class:`~ligp.design.ReplicatedDesign`
    and are sorted by distance, then by row index.
    """

    xprime: np.ndarray
    indices: np.ndarray
    sqdist: np.ndarray
    n_local: int

    @property
    def nbar(self):
        return self.indices.size


class SpatialIndex:
    """k-d tree over the unique inputs with deterministic tie-breaking."""

    def __init__(self, Xbar):
        Xbar = np.atleast_2d(np.asarray(Xbar, dtype=float))
        if Xbar.shape[0] < 1:
            raise InputError("cannot index an empty design")
        self.X = Xbar
        self.tree = cKDTree(Xbar)

    @property
    def size(self):
        return self.X.shape[0]

    def query(self, xprime, k):
        """Indices and squared distances of the ``k`` nearest rows to each query.

        ``xprime`` is (d,) or (q, d).  Returns arrays of shape (q, k).  Rows at
        equal distance are ordered by index; ties straddling the k-th place
        are resolved with a brute-force pass over the affected queries.
        """
        Xq = np.atleast_2d(np.asarray(xprime, dtype=float))
        if Xq.shape[1] != self.X.shape[1]:
            raise InputError(f"query is {Xq.shape[1]}-d but index is {self.X.shape[1]}-d")
        if not 1 <= k <= self.size:
            raise InputError(f"neighborhood size {k} outside [1, {self.size}]")
        kq = min(k + 1, self.size)
        _, idx = self.tree.query(Xq, k=kq)
        idx = np.asarray(idx).reshape(Xq.shape[0], kq)
        # recompute distances exactly so equal points give equal values
        d2 = np.sum((self.X[idx] - Xq[:, None, :]) ** 2, axis=2)
        o = np.lexsort((idx, d2), axis=-1)
        idx = np.take_along_axis(idx, o, axis=1)
        d2 = np.take_along_axis(d2, o, axis=1)
        out_idx, out_d2 = idx[:, :k].copy(), d2[:, :k].copy()
        if kq > k:
            # near-ties at the boundary: the tree may rank them differently
            amb = np.flatnonzero(d2[:, k] <= d2[:, k - 1] * (1.0 + 1e-12))
            for q in amb:
                out_idx[q], out_d2[q] = self._brute(Xq[q], k)
        return out_idx, out_d2

    def _brute(self, x, k):
        d2 = np.sum((self.X - x) ** 2, axis=1)
        o = np.lexsort((np.arange(self.size), d2))[:k]
        return o, d2[o]


def build_index(design):
    """Spatial index over ``design.Xbar``."""
    return SpatialIndex(design.Xbar)


def neighborhood(index, design, xprime, nbar):
    """The ``nbar`` nearest unique inputs to ``xprime``."""
    if not 1 <= nbar <= design.nbar:
        raise InputError(f"nbar={nbar} must lie in [1, {design.nbar}]")
    x = np.asarray(xprime, dtype=float).reshape(-1)
    idx, d2 = index.query(x, nbar)
    idx, d2 = idx[0], d2[0]
    return LocalNeighborhood(x, idx, d2, int(design.A[idx].sum()))


def brute_force_neighbors(Xbar, xprime, nbar):
    """Reference k-NN by a full sort; for tests."""
    d2 = np.sum((np.asarray(Xbar) - np.asarray(xprime)) ** 2, axis=1)
    return np.lexsort((np.arange(d2.size), d2))[:nbar]
