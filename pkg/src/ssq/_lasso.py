"""Lasso by covariance-update coordinate descent, with K-fold CV over a lambda path.

Objective on internally standardized covariates ``z``:

    (1/n) sum_i (y_i - ybar - beta' z_i)^2 + lam * ||beta||_1

so the KKT bound for an inactive coordinate is ``|(2/n) z_j'(y - yhat)| <= lam``
and every slope is zero once ``lam >= (2/n) ||Z'(y - ybar)||_inf``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DataError

CD_TOL = 1e-9
MAX_SWEEPS = 100_000
N_LAMBDA = 40


@njit(cache=True, nogil=True)
def _cd_gram(G, b, lam, beta, tol, max_sweeps):
    """Minimize beta'G beta - 2 b'beta + lam |beta|_1 in place; returns sweeps used."""
    p = b.shape[0]
    grad = b - G @ beta
    half = 0.5 * lam
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            rho = grad[j] + gjj * old
            if rho > half:
                new = (rho - half) / gjj
            elif rho < -half:
                new = (rho + half) / gjj
            else:
                new = 0.0
            if new != old:
                d = new - old
                beta[j] = new
                for k in range(p):
                    grad[k] -= d * G[k, j]
                if abs(d) > max_change:
                    max_change = abs(d)
        if max_change < tol:
            return sweep + 1
    return max_sweeps


@njit(cache=True, nogil=True)
def _path_gram(G, b, lambdas, tol, max_sweeps):
    p = b.shape[0]
    out = np.zeros((lambdas.shape[0], p))
    beta = np.zeros(p)
    for i in range(lambdas.shape[0]):
        _cd_gram(G, b, lambdas[i], beta, tol, max_sweeps)
        out[i] = beta
    return out


def solve_gram(G, b, lam, beta0=None, tol=CD_TOL):
    beta = np.zeros(b.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
    _cd_gram(np.ascontiguousarray(G), np.ascontiguousarray(b), float(lam), beta, tol, MAX_SWEEPS)
    return beta


def standardize(x):
    """Center and scale columns (population sd); constant columns are rejected."""
    x = np.asarray(x, dtype=float)
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    bad = np.flatnonzero(~(scale > 1e-12 * np.maximum(1.0, np.abs(center))))
    if bad.size:
        raise DataError(f"zero-variance covariate in column(s) {bad.tolist()}")
    return (x - center) / scale, center, scale


@dataclass(frozen=True)
class LassoResult:
    coef: np.ndarray          # original covariate scale
    intercept: float
    coef_std: np.ndarray      # standardized scale
    lam: float
    lambdas: np.ndarray
    cv_mse: np.ndarray | None
    lam_max: float


class LassoDesign:
    """Standardized design with cached Gram matrices for repeated CV fits.

    Several responses (e.g. the pseudo-responses of sparse SIR) can be
    fitted against one design without recomputing the p x p products.
    """

    def __init__(self, x, cv_folds: int = 10, rng: np.random.Generator | None = None):
        self.z, self.center, self.scale = standardize(x)
        self.n, self.p = self.z.shape
        self.cv_folds = int(cv_folds)
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self.gram = self.z.T @ self.z / self.n
        self._folds = None

    def _fold_cache(self):
        if self._folds is None:
            K = min(self.cv_folds, self.n)
            if K < 2:
                raise DataError("lasso cross-validation needs at least two folds")
            labels = np.empty(self.n, dtype=np.int64)
            labels[self._rng.permutation(self.n)] = np.arange(self.n) % K
            S = self.z.T @ self.z
            colsum = self.z.sum(axis=0)
            folds = []
            for k in range(K):
                val = np.flatnonzero(labels == k)
                zv = self.z[val]
                m = self.n - val.size
                zbar = (colsum - zv.sum(axis=0)) / m
                G = (S - zv.T @ zv) / m - np.outer(zbar, zbar)
                folds.append((val, m, zbar, np.ascontiguousarray(G)))
            self._folds = (labels, folds)
        return self._folds

    def lambda_max(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(2.0 * np.max(np.abs(self.z.T @ (y - y.mean()) / self.n)))

    def default_grid(self, y) -> np.ndarray:
        lam_max = self.lambda_max(y)
        if lam_max <= 0:
            return np.array([1.0])
        ratio = 1e-3 if self.n > self.p else 1e-2
        return lam_max * np.geomspace(1.0, ratio, N_LAMBDA)

    def fit(self, y, lambda_grid=None, fold_targets=None) -> LassoResult:
        """Lasso path over ``lambda_grid`` with the CV-MSE minimizer selected.

        ``fold_targets(train, val)``, when given, returns the training
        response and the held-out target for one fold. It lets a response
        that is itself estimated from the data be rebuilt inside each fold.
        """
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != self.n:
            raise DataError("response length does not match the design")
        grid = self.default_grid(y) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
        if grid.size == 0 or np.any(grid < 0):
            raise DataError("lambda grid must be nonempty and nonnegative")
        grid = np.sort(grid)[::-1].copy()
        ybar = y.mean()
        b = self.z.T @ (y - ybar) / self.n
        cv_mse = None
        if grid.size == 1:
            best = 0
        else:
            _, folds = self._fold_cache()
            sse = np.zeros(grid.size)
            zy = self.z.T @ y
            ysum = y.sum()
            for val, m, zbar, G in folds:
                if fold_targets is None:
                    ybar_t = (ysum - y[val].sum()) / m
                    b_t = (zy - self.z[val].T @ y[val]) / m - zbar * ybar_t
                    target = y[val]
                else:
                    train = np.setdiff1d(np.arange(self.n), val, assume_unique=True)
                    y_t, target = fold_targets(train, val)
                    ybar_t = y_t.mean()
                    b_t = self.z[train].T @ (y_t - ybar_t) / m
                path = _path_gram(G, np.ascontiguousarray(b_t), grid, CD_TOL, MAX_SWEEPS)
                pred = ybar_t + (self.z[val] - zbar) @ path.T
                sse += np.sum((target[:, None] - pred) ** 2, axis=0)
            cv_mse = sse / self.n
            best = int(np.argmin(cv_mse))
        path = _path_gram(np.ascontiguousarray(self.gram), b, grid[:best + 1], CD_TOL, MAX_SWEEPS)
        coef_std = path[-1]
        coef = coef_std / self.scale
        return LassoResult(coef=coef, intercept=float(ybar - self.center @ coef),
                           coef_std=coef_std, lam=float(grid[best]), lambdas=grid,
                           cv_mse=cv_mse, lam_max=self.lambda_max(y))
