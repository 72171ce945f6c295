"""Nadaraya-Watson smoothing of psi(Y, theta) on generated covariates P'X.

The smoother is

    phi(x) = (m(x) + ridge * mean(psi)) / (l(x) + ridge),
    m(x) = h^-r mean_i psi_i K((P'x - P'X_i) / h),
    l(x) = h^-r mean_i K((P'x - P'X_i) / h),

with ``K`` the product Gaussian kernel. The ridge pulls predictions in
sparse regions toward the training mean of psi, so every prediction stays
a convex combination of the training values. The bandwidth is chosen per fit by
maximizing the leave-one-out Bernoulli log-likelihood of I(Y < theta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numba import njit

from ..core import _as_tau, psi
from ..dimred import DimRedSpec, Projection, fit_projection
from ..errors import DataError, NumericalError, ZeroDirectionError
from ..normal import SQRT_2PI, norm_pdf
from .base import ConstantModel

RIDGE = 1e-12
MASS_UNDERFLOW = 1e-300
KAPPA = 1e-6
GRID_LO, GRID_HI, GRID_SIZE = 0.1, 3.0, 20


def gaussian_product_kernel(s) -> np.ndarray | float:
    """prod_j phi(s_j) over the last axis."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        s = s[None]
    out = np.prod(norm_pdf(s), axis=-1)
    return float(out) if out.ndim == 0 else out


@njit(cache=True, nogil=True)
def _sqdist(a, i, b, j):
    d2 = 0.0
    for c in range(a.shape[1]):
        t = a[i, c] - b[j, c]
        d2 += t * t
    return d2


@njit(cache=True, nogil=True)
def _nw_eval(train, values, query, h, scale, ridge, fallback, out):
    """Fill ``out`` with NW predictions; returns the first failing row or -1.

    ``scale`` converts a raw sum of exp(-d^2 / 2h^2) into the density-scale
    kernel mass, so that ``ridge`` is measured against ``l(x)``; the ridge
    term carries weight on ``fallback``.
    """
    m = train.shape[0]
    inv = -0.5 / (h * h)
    for q in range(query.shape[0]):
        den = 0.0
        num = 0.0
        for i in range(m):
            w = math.exp(_sqdist(query, q, train, i) * inv)
            den += w
            num += w * values[i]
        if den < 1e-300:
            if ridge > 0.0:
                out[q] = fallback
                continue
            return q
        out[q] = (num * scale + ridge * fallback) / (den * scale + ridge)
    return -1


@njit(cache=True, nogil=True)
def _loo_sums(train, ind, hs):
    """Leave-one-out kernel sums for every bandwidth; each distance is computed once."""
    m = train.shape[0]
    H = hs.shape[0]
    inv = np.empty(H)
    for k in range(H):
        inv[k] = -0.5 / (hs[k] * hs[k])
    den = np.zeros((H, m))
    num = np.zeros((H, m))
    for i in range(m):
        for j in range(i + 1, m):
            d2 = _sqdist(train, i, train, j)
            for k in range(H):
                w = math.exp(d2 * inv[k])
                den[k, i] += w
                den[k, j] += w
                num[k, i] += w * ind[j]
                num[k, j] += w * ind[i]
    return den, num


def _mass_scale(h: float, r: int, m: int) -> float:
    return 1.0 / (m * (SQRT_2PI * h) ** r)


def loo_log_likelihood(proj, ind, hs, tau: float, ridge: float = RIDGE,
                       kappa: float = KAPPA) -> np.ndarray:
    """Cross-validated log-likelihood of the 0/1 labels ``ind`` for each bandwidth."""
    proj = np.ascontiguousarray(proj, dtype=float)
    ind = np.ascontiguousarray(ind, dtype=float)
    hs = np.ascontiguousarray(hs, dtype=float)
    m, r = proj.shape
    if m < 2:
        raise DataError("leave-one-out CV needs at least two training rows")
    den, num = _loo_sums(proj, ind, hs)
    fallback = (ind.sum() - ind) / (m - 1) - tau
    out = np.empty(hs.shape[0])
    for k, h in enumerate(hs):
        c = _mass_scale(h, r, m - 1)
        mass = den[k] * c
        with np.errstate(invalid="ignore", divide="ignore"):
            phi = (num[k] * c - tau * mass + ridge * fallback) / (mass + ridge)
        empty = den[k] < MASS_UNDERFLOW
        if np.any(empty):
            if ridge == 0.0:
                out[k] = -np.inf
                continue
            phi = np.where(empty, fallback, phi)
        prob = np.clip(phi + tau, kappa, 1.0 - kappa)
        out[k] = np.sum(ind * np.log(prob) + (1.0 - ind) * np.log1p(-prob))
    return out


def reference_bandwidth(proj) -> float:
    """Per-column rule of thumb at rate m^(-1/(4+r)), averaged over columns."""
    proj = np.asarray(proj, dtype=float)
    m, r = proj.shape
    hs = []
    for col in proj.T:
        sd = col.std(ddof=1)
        q75, q25 = np.percentile(col, [75, 25])
        spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
        hs.append(1.06 * spread * m ** (-1.0 / (4 + r)))
    h = float(np.mean(hs))
    if not h > 0:
        raise NumericalError("degenerate projected covariates: zero spread")
    return h


def default_grid(proj) -> np.ndarray:
    return reference_bandwidth(proj) * np.geomspace(GRID_LO, GRID_HI, GRID_SIZE)


def select_bandwidth(proj, ind, grid, tau: float, ridge: float = RIDGE,
                     kappa: float = KAPPA) -> tuple[float, np.ndarray]:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or np.any(~(grid > 0)):
        raise DataError("bandwidth grid must be nonempty and positive")
    if grid.size == 1:
        return float(grid[0]), np.array([np.nan])
    ll = loo_log_likelihood(proj, ind, grid, tau, ridge, kappa)
    if not np.any(np.isfinite(ll)):
        raise NumericalError("bandwidth selection failed: no finite CV likelihood")
    return float(grid[int(np.nanargmax(np.where(np.isfinite(ll), ll, -np.inf)))]), ll


def cv_bandwidth(train_y, train_x, theta: float, projection, grid, tau,
                 ridge: float = RIDGE, kappa: float = KAPPA) -> float:
    """Grid maximizer of the leave-one-out likelihood on the projected training rows."""
    tau = _as_tau(tau)
    P = projection.matrix if isinstance(projection, Projection) else np.asarray(projection, float)
    x = np.asarray(train_x, dtype=float)
    proj = (x if x.ndim == 2 else x[:, None]) @ (P if P.ndim == 2 else P[:, None])
    ind = (np.asarray(train_y, dtype=float) < theta).astype(float)
    return select_bandwidth(proj, ind, grid, tau, ridge, kappa)[0]


@dataclass(frozen=True)
class KernelSmootherModel:
    projection: np.ndarray
    bandwidth: float
    train_proj: np.ndarray
    train_psi: np.ndarray
    ridge: float = RIDGE
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise DataError("bandwidth must be positive")
        P = np.asarray(self.projection, dtype=float)
        object.__setattr__(self, "projection", P if P.ndim == 2 else P[:, None])
        object.__setattr__(self, "train_proj", np.ascontiguousarray(self.train_proj, dtype=float))
        object.__setattr__(self, "train_psi", np.ascontiguousarray(self.train_psi, dtype=float))

    @classmethod
    def from_training(cls, train_x, train_psi, projection, bandwidth, ridge=RIDGE, **diag):
        P = np.asarray(projection, dtype=float)
        P = P if P.ndim == 2 else P[:, None]
        x = np.asarray(train_x, dtype=float)
        x = x if x.ndim == 2 else x[:, None]
        return cls(P, float(bandwidth), x @ P, train_psi, ridge, dict(diag))

    @property
    def r(self) -> int:
        return self.projection.shape[1]

    def predict_projected(self, s) -> np.ndarray:
        s = np.ascontiguousarray(np.atleast_2d(np.asarray(s, dtype=float)))
        out = np.empty(s.shape[0])
        m = self.train_proj.shape[0]
        bad = _nw_eval(self.train_proj, self.train_psi, s, self.bandwidth,
                       _mass_scale(self.bandwidth, self.r, m), self.ridge,
                       float(self.train_psi.mean()), out)
        if bad >= 0:
            raise NumericalError(f"empty neighborhood at query row {bad}")
        return out

    def predict(self, x, theta=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        return self.predict_projected(x @ self.projection)

    def weights(self, x) -> np.ndarray:
        """Normalized kernel weights (rows sum to one) for query rows ``x``."""
        s = np.atleast_2d(np.asarray(x, dtype=float)) @ self.projection
        d = (s[:, None, :] - self.train_proj[None, :, :]) / self.bandwidth
        logw = -0.5 * np.sum(d * d, axis=-1)
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        return w / w.sum(axis=1, keepdims=True)


def nw_predict(model: KernelSmootherModel, x) -> np.ndarray:
    return model.predict(x)


def fit_kernel_strategy(train_y, train_x, theta: float, tau, dimred: DimRedSpec | None = None,
                        grid=None, rng: np.random.Generator | None = None,
                        ridge: float = RIDGE, kappa: float = KAPPA):
    """Estimate directions, pick the bandwidth by LOO likelihood, store psi.

    ``grid`` holds absolute bandwidths; by default 20 geometric points on
    ``[0.1, 3]`` times the reference bandwidth of the projected rows. If the
    direction estimator returns nothing but zeros (typical for a lasso fit
    on pure noise) the fold falls back to the constant training mean of psi.
    """
    tau = _as_tau(tau)
    dimred = dimred or DimRedSpec("identity")
    y = np.asarray(train_y, dtype=float)
    x = np.asarray(train_x, dtype=float)
    x = x if x.ndim == 2 else x[:, None]
    values = psi(y, theta, tau)
    try:
        projection = fit_projection(x, y, dimred, rng)
    except ZeroDirectionError as exc:
        return FallbackModel(float(values.mean()), f"zero direction: {exc}")
    proj = x @ projection.matrix
    ind = (y < theta).astype(float)
    if grid is None:
        grid = default_grid(proj)
    h, ll = select_bandwidth(proj, ind, grid, tau, ridge, kappa)
    return KernelSmootherModel(projection.matrix, h, proj, values, ridge,
                               {"method": projection.method, "cv_loglik": ll,
                                "projection": projection.diagnostics})


@dataclass(frozen=True)
class FallbackModel(ConstantModel):
    reason: str = ""


@dataclass(frozen=True)
class KernelStrategy:
    tau: float
    dimred: DimRedSpec = field(default_factory=lambda: DimRedSpec("ols"))
    grid: tuple[float, ...] | None = None
    ridge: float = RIDGE
    kappa: float = KAPPA

    def fit(self, y, x, theta, rng=None):
        return fit_kernel_strategy(y, x, theta, self.tau, self.dimred, self.grid, rng,
                                   self.ridge, self.kappa)
