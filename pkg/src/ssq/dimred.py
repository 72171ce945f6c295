"""Generated-covariate directions: OLS, lasso, SIR and sparse SIR.

Every method returns a :class:`Projection` whose columns have unit
Euclidean norm with the largest-magnitude entry positive. The unnormalized
estimate is kept on ``raw``; the kernel smoother only sees ``matrix``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from ._lasso import LassoDesign
from .errors import DataError, NumericalError, ZeroDirectionError

METHODS = ("identity", "ols", "lasso", "sir", "sparse_sir")
WHITEN_RIDGE = 1e-8
SIR_SLICE_DIVISOR = 5
SPARSE_SIR_SLICE_DIVISOR = 75


@dataclass(frozen=True)
class DimRedSpec:
    method: str = "ols"
    r: int = 1
    slices: int | None = None
    lambda_grid: tuple[float, ...] | None = None
    cv_folds: int = 10
    slice_divisor: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown dimension reduction method {self.method!r}")
        if self.r < 1:
            raise DataError("r must be at least 1")
        if self.method in ("ols", "lasso") and self.r != 1:
            raise DataError(f"{self.method} produces a single direction (r=1)")
        if self.method in ("sir", "sparse_sir") and self.slices is not None \
                and self.r > self.slices - 1:
            raise DataError("SIR needs r <= slices - 1")
        if self.cv_folds < 2:
            raise DataError("cv_folds must be at least 2")

    def n_slices(self, n: int) -> int:
        """Slice count for a training sample of size ``n``.

        Defaults to ``ceil(n/5)`` equal-width slices for SIR and
        ``ceil(n/75)`` equal-count slices for sparse SIR, never fewer than
        ``r + 1``.
        """
        if self.slices is not None:
            return self.slices
        div = self.slice_divisor or (
            SIR_SLICE_DIVISOR if self.method == "sir" else SPARSE_SIR_SLICE_DIVISOR)
        return max(math.ceil(n / div), self.r + 1)


@dataclass(frozen=True)
class Projection:
    matrix: np.ndarray
    method: str
    diagnostics: dict[str, Any] = field(default_factory=dict)
    raw: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if np.any(np.all(m == 0.0, axis=0)):
            raise ZeroDirectionError("projection has an all-zero direction", raw=self.raw)
        object.__setattr__(self, "matrix", m)

    @property
    def r(self) -> int:
        return self.matrix.shape[1]


def normalize_columns(raw) -> np.ndarray:
    """Unit-length columns, sign fixed so the largest-magnitude entry is positive."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float).T).T
    out = raw.copy()
    for j in range(raw.shape[1]):
        col = raw[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            continue
        col = col / norm
        if col[np.argmax(np.abs(col))] < 0:
            col = -col
        out[:, j] = col
    return out


def _check_xy(x, y):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise DataError("x and y differ in length")
    return x, y


def identity_projection(p: int) -> Projection:
    return Projection(np.eye(p), "identity", raw=np.eye(p))


def ols_direction(x, y) -> Projection:
    """Least-squares slope vector of ``y`` on ``x`` (intercept fitted, then dropped)."""
    x, y = _check_xy(x, y)
    n, p = x.shape
    if n <= p:
        raise NumericalError(f"singular design: n={n} not greater than p={p}")
    design = np.column_stack([np.ones(n), x])
    q, rmat, perm = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat))
    if diag[-1] <= max(n, p + 1) * np.finfo(float).eps * diag[0]:
        raise NumericalError("singular design: covariates are (nearly) collinear")
    sol = np.empty(p + 1)
    sol[perm] = scipy.linalg.solve_triangular(rmat, q.T @ y)
    slope = sol[1:]
    resid = y - design @ sol
    if not np.any(slope):
        raise ZeroDirectionError("least-squares slope is exactly zero", raw=slope[:, None])
    return Projection(normalize_columns(slope), "ols",
                      diagnostics={"intercept": float(sol[0]),
                                   "rss": float(resid @ resid)},
                      raw=slope[:, None])


def lasso_direction(x, y, lambda_grid=None, cv_folds: int = 10,
                    rng: np.random.Generator | None = None) -> Projection:
    """L1-penalized slope vector at the CV-MSE-minimizing penalty."""
    x, y = _check_xy(x, y)
    res = LassoDesign(x, cv_folds=cv_folds, rng=rng).fit(y, lambda_grid)
    raw = res.coef[:, None]
    if not np.any(res.coef):
        raise ZeroDirectionError("lasso selected no covariates", raw=raw)
    return Projection(normalize_columns(res.coef), "lasso",
                      diagnostics={"lambda": res.lam, "lambda_max": res.lam_max,
                                   "cv_mse": None if res.cv_mse is None else res.cv_mse.min(),
                                   "support": int(np.count_nonzero(res.coef))},
                      raw=raw)


def slice_labels(y, slices: int, slicing: str = "width") -> np.ndarray:
    """Slice membership ``0..H-1``; empty equal-width slices are dropped (merged)."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    slices = int(min(slices, n))
    if slices < 1:
        raise DataError("need at least one slice")
    if slicing == "width":
        lo, hi = y.min(), y.max()
        if hi == lo:
            return np.zeros(n, dtype=np.int64)
        raw = np.floor((y - lo) / (hi - lo) * slices).astype(np.int64)
        raw = np.minimum(raw, slices - 1)
        _, labels = np.unique(raw, return_inverse=True)
        return labels.astype(np.int64)
    if slicing == "count":
        labels = np.empty(n, dtype=np.int64)
        for h, idx in enumerate(np.array_split(np.argsort(y, kind="stable"), slices)):
            labels[idx] = h
        return labels
    raise DataError(f"unknown slicing scheme {slicing!r}")


def slice_moments(z, labels):
    """Slice weights and slice means of the rows of ``z``."""
    H = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=H).astype(float)
    sums = np.zeros((H, z.shape[1]))
    np.add.at(sums, labels, z)
    return counts / z.shape[0], sums / counts[:, None]


def whitening(x, full: bool = True):
    """Return ``(center, W)`` with ``(x - center) @ W`` having identity covariance.

    With ``full=False`` only the coordinate scales are equalized.
    """
    center = x.mean(axis=0)
    xc = x - center
    if not full:
        sd = xc.std(axis=0)
        if np.any(sd <= 0):
            raise NumericalError("singular covariance: constant covariate")
        return center, np.diag(1.0 / sd)
    cov = xc.T @ xc / x.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= 1e-10 * max(vals[-1], 1e-300):
        raise NumericalError("singular covariance")
    return center, (vecs / np.sqrt(vals + WHITEN_RIDGE)) @ vecs.T


def _sir_kernel(x, y, slices, r, slicing, full_whitening=True):
    center, W = whitening(x, full_whitening)
    z = (x - center) @ W
    labels = slice_labels(y, slices, slicing)
    weights, means = slice_moments(z, labels)
    M = (means * weights[:, None]).T @ means
    vals, vecs = np.linalg.eigh(M)
    order = np.argsort(vals)[::-1]
    return W, z, labels, means, vals[order], vecs[:, order]


def sir_directions(x, y, slices: int, r: int, slicing: str = "width") -> Projection:
    """Top-``r`` sliced inverse regression directions on the original covariate scale."""
    x, y = _check_xy(x, y)
    n, p = x.shape
    if n <= p:
        raise NumericalError(f"singular covariance: n={n} not greater than p={p}")
    if r > slices - 1:
        raise DataError("SIR needs r <= slices - 1")
    if r > p:
        raise DataError("SIR needs r <= p")
    W, _, labels, _, vals, vecs = _sir_kernel(x, y, slices, r, slicing)
    raw = W @ vecs[:, :r]
    return Projection(normalize_columns(raw), "sir",
                      diagnostics={"eigenvalues": vals.tolist(),
                                   "slices": int(labels.max()) + 1},
                      raw=raw)


def _fold_pseudo(x, y, train, val, slices, r, slicing, full):
    """Pseudo-responses built from the training rows of one CV fold.

    Held-out rows are placed in the training slices by their response and
    scored against the training slice means, so the target carries no
    information about their own covariates.
    """
    try:
        _, _, labels, means, vals, vecs = _sir_kernel(x[train], y[train], slices, r, slicing, full)
    except NumericalError:
        _, _, labels, means, vals, vecs = _sir_kernel(x[train], y[train], slices, r, slicing, False)
    yt = y[train]
    upper = np.array([yt[labels == h].max() for h in range(means.shape[0])])
    val_labels = np.minimum(np.searchsorted(upper, y[val], side="left"), means.shape[0] - 1)
    out = []
    for j in range(r):
        if j >= vecs.shape[1] or vals[j] <= 1e-12:
            out.append((np.zeros(train.size), np.zeros(val.size)))
            continue
        score = means @ vecs[:, j] / vals[j]
        out.append((score[labels], score[val_labels]))
    return out


def sparse_sir_directions(x, y, slices: int, r: int, lambda_grid=None, cv_folds: int = 10,
                          rng: np.random.Generator | None = None,
                          slicing: str = "count") -> Projection:
    """Lasso reduction of SIR.

    Eigenvectors ``eta_j`` of the slice-mean covariance are computed in
    whitened coordinates (coordinate-wise scaling only when ``p >= n``).
    Each observation gets the pseudo-response ``zbar_{h(i)}' eta_j / lambda_j``
    whose population regression on ``x`` is the j-th SIR direction; the
    regression is solved with a CV-tuned lasso. The CV rebuilds slices and
    eigenvectors from each training fold; otherwise the held-out rows would
    leak into their own targets and pure noise would never shrink to zero.
    Zero columns are dropped
    and reported in ``diagnostics``; if every column is zero the call
    raises :class:`ZeroDirectionError`.
    """
    x, y = _check_xy(x, y)
    n, p = x.shape
    if r > slices - 1:
        raise DataError("SIR needs r <= slices - 1")
    full = n > p
    if full:
        try:
            W, _, labels, means, vals, vecs = _sir_kernel(x, y, slices, r, slicing, True)
        except NumericalError:
            full = False
    if not full:
        W, _, labels, means, vals, vecs = _sir_kernel(x, y, slices, r, slicing, False)
    design = LassoDesign(x, cv_folds=cv_folds, rng=rng)
    folds = {}

    def fold_targets(j):
        def build(train, val):
            key = int(val[0])
            if key not in folds:
                folds[key] = _fold_pseudo(x, y, train, val, slices, r, slicing, full)
            return folds[key][j]
        return build

    raw = np.zeros((p, r))
    lambdas = []
    for j in range(min(r, vecs.shape[1])):
        if vals[j] <= 1e-12:
            lambdas.append(float("nan"))
            continue
        pseudo = (means @ vecs[:, j])[labels] / vals[j]
        res = design.fit(pseudo, lambda_grid, fold_targets(j))
        raw[:, j] = res.coef
        lambdas.append(res.lam)
    keep = np.flatnonzero(np.any(raw != 0.0, axis=0))
    if keep.size == 0:
        raise ZeroDirectionError("sparse SIR selected no covariates", raw=raw)
    return Projection(normalize_columns(raw[:, keep]), "sparse_sir",
                      diagnostics={"eigenvalues": vals.tolist(), "lambdas": lambdas,
                                   "dropped": [int(j) for j in range(r) if j not in keep],
                                   "full_whitening": full,
                                   "slices": int(labels.max()) + 1},
                      raw=raw)


def fit_projection(x, y, spec: DimRedSpec, rng: np.random.Generator | None = None) -> Projection:
    """Dispatch on ``spec.method``."""
    x, y = _check_xy(x, y)
    grid = None if spec.lambda_grid is None else np.asarray(spec.lambda_grid, dtype=float)
    if spec.method == "identity":
        return identity_projection(x.shape[1])
    if spec.method == "ols":
        return ols_direction(x, y)
    if spec.method == "lasso":
        return lasso_direction(x, y, grid, spec.cv_folds, rng)
    if spec.method == "sir":
        return sir_directions(x, y, spec.n_slices(x.shape[0]), spec.r, "width")
    return sparse_sir_directions(x, y, spec.n_slices(x.shape[0]), spec.r, grid,
                                 spec.cv_folds, rng, "count")
