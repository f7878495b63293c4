"""Replicated designs: compression to sufficient statistics, CSV I/O, prescaling."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ligp.dense import fit_dense_gp
from ligp.errors import FittingError, InputError


@dataclass(frozen=True)
class RawDesign:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries")
        if X.shape[0] < 1:
            raise InputError("design is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InputError("design contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def d(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class ReplicatedDesign:
    """Unique inputs with replicate counts, means and sums of squares."""

    Xbar: np.ndarray
    A: np.ndarray
    Ybar: np.ndarray
    S: np.ndarray

    @property
    def n_total(self):
        return int(self.A.sum())

    @property
    def nbar(self):
        return self.Xbar.shape[0]

    @property
    def d(self):
        return self.Xbar.shape[1]

    def expand_means(self):
        """Raw design with each unique row repeated ``a_i`` times at its mean."""
        return RawDesign(np.repeat(self.Xbar, self.A, axis=0), np.repeat(self.Ybar, self.A))

    def subset(self, idx):
        return ReplicatedDesign(self.Xbar[idx], self.A[idx], self.Ybar[idx], self.S[idx])

    def with_inputs(self, Xbar):
        return ReplicatedDesign(np.asarray(Xbar, dtype=float), self.A, self.Ybar, self.S)

    def shift_response(self, c):
        """Design for responses ``y - c`` (sums of squares updated exactly)."""
        S = self.S - 2.0 * c * self.A * self.Ybar + self.A * c * c
        return ReplicatedDesign(self.Xbar, self.A, self.Ybar - c, S)


def compress(raw, tol=0.0):
    """Group identical input rows and summarize their responses.

    Rows match when every coordinate agrees within ``tol``; the default
    ``tol = 0`` requires exact equality.  Output rows are in lexicographic
    order of the unique inputs.
    """
    if not isinstance(raw, RawDesign):
        raw = RawDesign(*raw)
    if tol < 0:
        raise InputError("tol must be non-negative")
    X, Y = raw.X, raw.Y
    if tol == 0:
        Xbar, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
    else:
        order = np.lexsort(X.T[::-1])
        tree = cKDTree(X)
        group = np.full(X.shape[0], -1)
        reps = []
        for i in order:
            if group[i] >= 0:
                continue
            members = tree.query_ball_point(X[i], r=tol, p=np.inf)
            members = [j for j in members if group[j] < 0]
            group[members] = len(reps)
            reps.append(i)
        Xbar = X[reps]
        inv = group
    nbar = Xbar.shape[0]
    A = np.bincount(inv, minlength=nbar)
    Ybar = np.bincount(inv, weights=Y, minlength=nbar) / A
    S = np.bincount(inv, weights=Y * Y, minlength=nbar)
    return ReplicatedDesign(Xbar, A.astype(np.int64), Ybar, S)


def read_csv(path):
    """Read a design CSV with header ``x1..xd,y``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        xcols = [h for h in header if h.startswith("x")]
        if "y" not in header:
            raise InputError(f"{path}: missing column 'y' in header {header}")
        expected = [f"x{i + 1}" for i in range(len(xcols))]
        if not xcols or xcols != expected:
            raise InputError(f"{path}: input columns must be x1..xd, got {xcols}")
        pos = [header.index(c) for c in expected] + [header.index("y")]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[p]) for p in pos])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.array(rows)
    return RawDesign(arr[:, :-1], arr[:, -1])


def read_sites_csv(path):
    """Read prediction sites: columns ``x1..xd`` (a ``y`` column is ignored)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        xcols = [h for h in header if h.startswith("x")]
        if not xcols:
            raise InputError(f"{path}: no x1..xd columns")
        pos = [header.index(f"x{i + 1}") for i in range(len(xcols))]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[p]) for p in pos])
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=float).reshape(len(rows), len(pos))


def write_csv(path, raw):
    d = raw.X.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["y"])
        for x, y in zip(raw.X, raw.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


@dataclass(frozen=True)
class PrescaleTransform:
    """Columnwise division by square-rooted global lengthscales."""

    divisors: np.ndarray
    subset_size: int = 1000
    fitted: bool = True
    lengthscales: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        div = np.asarray(self.divisors, dtype=float)
        if np.any(~np.isfinite(div)) or np.any(div <= 0):
            raise InputError("prescale divisors must be positive")
        object.__setattr__(self, "divisors", div)

    @classmethod
    def identity(cls, d):
        return cls(np.ones(d), subset_size=0, fitted=True)


def fit_prescale(raw, subset_size=1000, seed=0):
    """Fit a separable dense GP to a random subset of unique inputs.

    The GP uses averaged responses at each unique input and an estimated
    nugget; returned divisors are the square roots of its lengthscales.
    """
    design = raw if isinstance(raw, ReplicatedDesign) else compress(raw)
    if design.nbar < 2:
        raise FittingError("need at least two unique inputs to fit a prescale")
    rng = np.random.default_rng(seed)
    k = min(subset_size, design.nbar)
    idx = np.sort(rng.choice(design.nbar, size=k, replace=False))
    X = design.Xbar[idx]
    y = design.Ybar[idx]
    if np.ptp(y) == 0:
        raise FittingError("constant response cannot identify lengthscales")
    y = y - y.mean()
    gp = fit_dense_gp(X, y, separable=True)
    ls = np.atleast_1d(gp.theta)
    return PrescaleTransform(np.sqrt(ls), subset_size=subset_size, fitted=True, lengthscales=ls)


def apply_prescale(t, X):
    if t is None or not t.fitted:
        raise InputError("prescale transform has not been fitted")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != t.divisors.size:
        raise InputError(f"transform is {t.divisors.size}-d but X is {X.shape[1]}-d")
    return X / t.divisors


def invert_prescale(t, Z):
    return np.atleast_2d(np.asarray(Z, dtype=float)) * t.divisors
