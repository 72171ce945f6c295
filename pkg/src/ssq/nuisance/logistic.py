"""Logistic working model for P(Y < theta | X).

Unpenalized fits use Newton/IRLS with step halving. L1 fits minimize

    -(1/m) sum_i [z_i eta_i - log(1 + exp(eta_i))] + lam * sum_{j>=1} |gamma_j|

by proximal Newton: each outer step solves the weighted least-squares
quadratic model by coordinate descent, with the intercept left unpenalized.
Covariates are used on the scale given (no internal standardization).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numba import njit
from scipy.special import expit

from ..core import _as_tau
from ..errors import DataError, NumericalError

MAX_ITER = 100
GRAD_TOL = 1e-8
CD_TOL = 1e-8
W_MIN = 1e-5
N_LAMBDA = 40


def _design(x):
    x = np.asarray(x, dtype=float)
    return x if x.ndim == 2 else x[:, None]


def _nll(eta, z):
    """Mean negative Bernoulli log-likelihood, stable for large |eta|."""
    return float(np.mean(np.logaddexp(0.0, eta) - z * eta))


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray     # intercept first
    penalty: float
    tau: float
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def linear_predictor(self, x) -> np.ndarray:
        x = _design(x) if np.ndim(x) != 1 else np.asarray(x, dtype=float)[None, :]
        return self.coefficients[0] + x @ self.coefficients[1:]

    def predict(self, x, theta=None) -> np.ndarray:
        return expit(self.linear_predictor(x)) - self.tau


def _check_labels(z):
    s = z.sum()
    if s == 0 or s == z.shape[0]:
        raise NumericalError("separation detected: all indicator labels are equal")


def _newton(X1, z, max_iter=MAX_ITER, tol=GRAD_TOL):
    """Unpenalized maximum likelihood on a design that includes the intercept column."""
    m, d = X1.shape
    gamma = np.zeros(d)
    gamma[0] = np.log(z.mean() / (1.0 - z.mean()))
    eta = X1 @ gamma
    obj = _nll(eta, z)
    for it in range(max_iter):
        prob = expit(eta)
        grad = X1.T @ (prob - z) / m
        if np.max(np.abs(grad)) < tol:
            return gamma, it, grad
        w = prob * (1.0 - prob)
        hess = (X1 * w[:, None]).T @ X1 / m
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise NumericalError("separation detected: singular information matrix") from None
        t = 1.0
        while True:
            cand = gamma - t * step
            eta_c = X1 @ cand
            obj_c = _nll(eta_c, z)
            if obj_c <= obj or t < 1e-10:
                break
            t *= 0.5
        gamma, eta, obj = cand, eta_c, obj_c
    raise NumericalError(f"separation detected: no convergence in {max_iter} iterations")


@njit(cache=True, nogil=True)
def _wls_cd(X, w, u, gamma, lam, tol, max_sweeps):
    """Coordinate descent on (1/2m) sum w_i (u_i - g0 - x_i'g)^2 + lam |g|_1, in place."""
    m, p = X.shape
    resid = u - gamma[0]
    for j in range(p):
        if gamma[j + 1] != 0.0:
            for i in range(m):
                resid[i] -= X[i, j] * gamma[j + 1]
    wsum = 0.0
    for i in range(m):
        wsum += w[i]
    xwx = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(m):
            s += w[i] * X[i, j] * X[i, j]
        xwx[j] = s / m
    for sweep in range(max_sweeps):
        max_change = 0.0
        # intercept: exact minimizer
        s = 0.0
        for i in range(m):
            s += w[i] * resid[i]
        d = s / wsum
        if d != 0.0:
            gamma[0] += d
            for i in range(m):
                resid[i] -= d
            max_change = abs(d)
        for j in range(p):
            if xwx[j] <= 0.0:
                continue
            old = gamma[j + 1]
            s = 0.0
            for i in range(m):
                s += w[i] * X[i, j] * resid[i]
            rho = s / m + xwx[j] * old
            if rho > lam:
                new = (rho - lam) / xwx[j]
            elif rho < -lam:
                new = (rho + lam) / xwx[j]
            else:
                new = 0.0
            if new != old:
                d = new - old
                gamma[j + 1] = new
                for i in range(m):
                    resid[i] -= d * X[i, j]
                if abs(d) > max_change:
                    max_change = abs(d)
        if max_change < tol:
            return sweep + 1
    return max_sweeps


def _objective(X, z, gamma, lam):
    eta = gamma[0] + X @ gamma[1:]
    return _nll(eta, z) + lam * np.sum(np.abs(gamma[1:]))


def _prox_newton(X, z, lam, gamma0=None, max_iter=MAX_ITER, tol=CD_TOL):
    m, p = X.shape
    if gamma0 is None:
        gamma = np.zeros(p + 1)
        gamma[0] = np.log(z.mean() / (1.0 - z.mean()))
    else:
        gamma = gamma0.copy()
    obj = _objective(X, z, gamma, lam)
    for it in range(max_iter):
        eta = gamma[0] + X @ gamma[1:]
        prob = expit(eta)
        w = np.maximum(prob * (1.0 - prob), W_MIN)
        u = eta + (z - prob) / w
        cand = gamma.copy()
        _wls_cd(X, w, u, cand, lam, tol, 10_000)
        step = cand - gamma
        t = 1.0
        while True:
            trial = gamma + t * step
            obj_t = _objective(X, z, trial, lam)
            if obj_t <= obj + 1e-15 or t < 1e-10:
                break
            t *= 0.5
        gamma = trial
        change = np.max(np.abs(t * step))
        improved = obj - obj_t
        obj = obj_t
        if change < tol or improved < 1e-14:
            return gamma, it + 1
    return gamma, max_iter


def lambda_max(x, z) -> float:
    """Smallest penalty at which every slope is zero."""
    X = _design(x)
    z = np.asarray(z, dtype=float)
    return float(np.max(np.abs(X.T @ (z - z.mean()) / X.shape[0])))


def _grid(X, z):
    lmax = lambda_max(X, z)
    ratio = 1e-3 if X.shape[0] > X.shape[1] else 1e-2
    return lmax * np.geomspace(1.0, ratio, N_LAMBDA)


def _path(X, z, lambdas):
    out = np.zeros((lambdas.shape[0], X.shape[1] + 1))
    gamma = None
    for k, lam in enumerate(lambdas):
        gamma, _ = _prox_newton(X, z, lam, gamma)
        out[k] = gamma
    return out


def _cv_penalty(X, z, lambdas, cv_folds, rng):
    m = X.shape[0]
    labels = np.empty(m, dtype=np.int64)
    labels[rng.permutation(m)] = np.arange(m) % cv_folds
    dev = np.zeros(lambdas.shape[0])
    for k in range(cv_folds):
        val = labels == k
        zt = z[~val]
        if zt.min() == zt.max():
            raise NumericalError("separation detected: a CV training fold has a single label")
        path = _path(np.ascontiguousarray(X[~val]), zt, lambdas)
        eta = path[:, :1] + path[:, 1:] @ X[val].T
        dev += np.sum(np.logaddexp(0.0, eta) - z[val] * eta, axis=1)
    return 2.0 * dev / m


def fit_logistic(train_y, train_x, theta: float, tau, penalty: float | str = 0.0,
                 cv_folds: int = 10, rng: np.random.Generator | None = None,
                 lambda_grid=None) -> LogisticModel:
    """Logistic regression of I(Y < theta) on X.

    ``penalty`` is either a nonnegative number or ``"cv"``, in which case
    the L1 penalty minimizing ``cv_folds``-fold deviance over a 40-point
    geometric path is used.
    """
    tau = _as_tau(tau)
    X = np.ascontiguousarray(_design(train_x))
    z = (np.asarray(train_y, dtype=float) < theta).astype(float)
    if X.shape[0] != z.shape[0]:
        raise DataError("x and y differ in length")
    _check_labels(z)
    if isinstance(penalty, str):
        if penalty != "cv":
            raise DataError(f"unknown penalty {penalty!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        lambdas = _grid(X, z) if lambda_grid is None else np.sort(
            np.asarray(lambda_grid, dtype=float))[::-1]
        dev = _cv_penalty(X, z, lambdas, cv_folds, rng)
        best = int(np.argmin(dev))
        gamma = _path(X, z, lambdas[:best + 1])[-1]
        return LogisticModel(gamma, float(lambdas[best]), tau,
                             {"cv_deviance": dev, "lambdas": lambdas})
    penalty = float(penalty)
    if penalty < 0:
        raise DataError("penalty must be nonnegative")
    if penalty == 0.0:
        X1 = np.column_stack([np.ones(X.shape[0]), X])
        gamma, iters, _ = _newton(X1, z)
        eta = X1 @ gamma
        if np.all((eta > 0) == (z == 1)) and np.all(eta != 0):
            raise NumericalError("separation detected: fitted model classifies every point")
        return LogisticModel(gamma, 0.0, tau, {"iterations": iters})
    gamma, iters = _prox_newton(X, z, penalty)
    return LogisticModel(gamma, penalty, tau, {"iterations": iters})


@dataclass(frozen=True)
class LogisticStrategy:
    tau: float
    penalty: float | str = 0.0
    cv_folds: int = 10

    def fit(self, y, x, theta, rng=None) -> LogisticModel:
        return fit_logistic(y, x, theta, self.tau, self.penalty, self.cv_folds, rng)
