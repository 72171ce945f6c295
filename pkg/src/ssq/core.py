"""Semi-supervised quantile estimation by a cross-fitted one-step update.

The estimator refines an initial quantile estimate with a single Newton
step on the debiased estimating equation

    E_{n+N}{phi(X, theta)} + E_n{psi(Y, theta) - phi(X, theta)} = 0,

where ``psi(y, theta) = I(y < theta) - tau`` and ``phi`` is any working
model for ``E{psi(Y, theta) | X}`` fitted out-of-fold on the labeled rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .errors import DataError, NumericalError, SSQError
from .normal import norm_pdf, norm_ppf
from .rng import SeedLike, derive_seed, make_rng

DENSITY_FLOOR = 1e-6


@dataclass(frozen=True)
class QuantileLevel:
    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not 0.0 < tau < 1.0 or not math.isfinite(tau):
            raise DataError(f"quantile level must lie strictly inside (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    def __float__(self):
        return self.tau


def _as_tau(tau) -> float:
    return tau.tau if isinstance(tau, QuantileLevel) else QuantileLevel(tau).tau


@dataclass(frozen=True)
class Dataset:
    """Labeled pairs plus unlabeled covariate rows."""

    labeled_y: np.ndarray
    labeled_x: np.ndarray
    unlabeled_x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.labeled_y, dtype=float).ravel()
        x = np.asarray(self.labeled_x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        u = np.asarray(self.unlabeled_x, dtype=float)
        if u.size == 0:
            u = np.empty((0, x.shape[1]))
        elif u.ndim == 1:
            u = u[:, None]
        if x.ndim != 2 or u.ndim != 2:
            raise DataError("covariates must be two-dimensional")
        if y.shape[0] != x.shape[0]:
            raise DataError(f"labeled_y has {y.shape[0]} rows but labeled_x has {x.shape[0]}")
        if y.shape[0] < 2:
            raise DataError("at least two labeled rows are required")
        if x.shape[1] < 1:
            raise DataError("at least one covariate is required")
        if u.shape[1] != x.shape[1]:
            raise DataError(
                f"labeled_x has {x.shape[1]} columns but unlabeled_x has {u.shape[1]}")
        for name, arr in (("labeled_y", y), ("labeled_x", x), ("unlabeled_x", u)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        for name, arr in (("labeled_y", y), ("labeled_x", x), ("unlabeled_x", u)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.labeled_y.shape[0]

    @property
    def N(self) -> int:
        return self.unlabeled_x.shape[0]

    @property
    def p(self) -> int:
        return self.labeled_x.shape[1]

    @property
    def nu(self) -> float:
        """Labeled fraction n / (n + N)."""
        return self.n / (self.n + self.N)


@dataclass(frozen=True)
class FoldPlan:
    """Fold labels ``0..K-1`` for each labeled index."""

    assignments: np.ndarray
    K: int

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)


@dataclass(frozen=True)
class ImputedValues:
    at_labeled: np.ndarray
    at_unlabeled: np.ndarray
    theta_used: float


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    bandwidth: float


@dataclass(frozen=True)
class QuantileFit:
    theta_sup: float
    theta_init: float
    theta_ss: float
    f_hat: DensityEstimate
    sigma2_ss: float
    se_ss: float
    se_sup: float
    ci_ss: tuple[float, float]
    ci_sup: tuple[float, float]
    level: float
    nu: float
    n: int
    N: int
    diagnostics: dict[str, Any] = field(default_factory=dict)


def psi(y, theta, tau):
    """Quantile estimating function ``I(y < theta) - tau``.

    Works elementwise on arrays; ``y == theta`` contributes ``-tau``.
    """
    tau = _as_tau(tau)
    out = (np.asarray(y) < theta).astype(float) - tau
    return out if out.ndim else float(out)


def sample_quantile(ys, tau) -> float:
    """The ``ceil(n * tau)``-th order statistic (left-continuous inverse ECDF)."""
    tau = _as_tau(tau)
    ys = np.asarray(ys, dtype=float).ravel()
    n = ys.shape[0]
    if n == 0:
        raise DataError("empty sample")
    # exact rational arithmetic keeps e.g. 10 * 0.7 from rounding up to 8
    k = max(1, math.ceil(Fraction(tau) * n))
    return float(np.partition(ys, k - 1)[k - 1])


def rule_of_thumb_bandwidth(ys) -> float:
    """``1.06 * min(sd, IQR / 1.34) * n^(-1/5)``; falls back to sd when IQR is 0."""
    ys = np.asarray(ys, dtype=float).ravel()
    sd = float(np.std(ys, ddof=1))
    q75, q25 = np.percentile(ys, [75.0, 25.0])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    if not spread > 0:
        raise DataError("degenerate sample")
    return 1.06 * spread * ys.shape[0] ** -0.2


def kde_density_at(ys, point: float, bandwidth: float | None = None) -> DensityEstimate:
    """Gaussian kernel density estimate of ``ys`` evaluated at ``point``."""
    ys = np.asarray(ys, dtype=float).ravel()
    if ys.shape[0] < 2:
        raise DataError("density estimation needs at least two observations")
    if bandwidth is None:
        bandwidth = rule_of_thumb_bandwidth(ys)
    elif not bandwidth > 0:
        raise DataError("bandwidth must be positive")
    value = float(np.mean(norm_pdf((point - ys) / bandwidth)) / bandwidth)
    return DensityEstimate(value=value, bandwidth=float(bandwidth))


def make_fold_plan(n: int, K: int, rng: np.random.Generator) -> FoldPlan:
    """Uniformly random partition of ``range(n)`` into ``K`` near-equal folds."""
    if K < 2 or K > n:
        raise DataError(f"invalid fold count K={K} for n={n}")
    labels = np.empty(n, dtype=np.int64)
    labels[rng.permutation(n)] = np.arange(n) % K
    return FoldPlan(assignments=labels, K=K)


def cross_fit(data: Dataset, strategy, plan: FoldPlan, theta: float,
              seed: SeedLike = 0) -> ImputedValues:
    """Out-of-fold imputations at the labeled rows, fold-averaged ones at the unlabeled rows.

    For each fold ``k`` a model is fitted on the complement of the fold; the
    rows of fold ``k`` are predicted by that model alone, while every
    unlabeled row receives the average over all ``K`` fold models.
    """
    if plan.K < 2:
        raise DataError("cross-fitting needs at least two folds")
    if plan.assignments.shape[0] != data.n:
        raise DataError("fold plan does not match the labeled sample size")
    at_labeled = np.empty(data.n)
    at_unlabeled = np.zeros(data.N)
    for k in range(plan.K):
        held, train = plan.indices(k), plan.complement(k)
        try:
            model = strategy.fit(data.labeled_y[train], data.labeled_x[train], theta,
                                 make_rng(seed, k))
        except SSQError as exc:
            raise type(exc)(f"strategy fit failed on fold {k}: {exc}") from exc
        at_labeled[held] = model.predict(data.labeled_x[held])
        if data.N:
            at_unlabeled += model.predict(data.unlabeled_x)
    at_unlabeled /= plan.K
    return ImputedValues(at_labeled=at_labeled, at_unlabeled=at_unlabeled, theta_used=float(theta))


def _check_density(f_hat: DensityEstimate):
    if not f_hat.value >= DENSITY_FLOOR:
        raise NumericalError(
            f"density floor violated: f_hat={f_hat.value:.3g} < {DENSITY_FLOOR:g}")


def one_step(theta_init: float, f_hat: DensityEstimate, imputed: ImputedValues,
             psi_labeled) -> float:
    """Newton refinement ``theta_init + [E_n(phi - psi) - E_{n+N}(phi)] / f_hat``.

    The pooled mean over all ``n + N`` rows combines the out-of-fold labeled
    imputations and the fold-averaged unlabeled ones, weighted by counts.
    """
    _check_density(f_hat)
    if imputed.theta_used != theta_init:
        raise DataError("imputations were computed at a different theta")
    psi_labeled = np.asarray(psi_labeled, dtype=float)
    phi_l, phi_u = imputed.at_labeled, imputed.at_unlabeled
    if psi_labeled.shape != phi_l.shape:
        raise DataError("psi_labeled and imputations differ in length")
    n, N = phi_l.shape[0], phi_u.shape[0]
    pooled = (phi_l.sum() + phi_u.sum()) / (n + N)
    return float(theta_init + (np.mean(phi_l - psi_labeled) - pooled) / f_hat.value)


def ss_variance(imputed: ImputedValues, psi_labeled, nu: float) -> float:
    """Plug-in ``(1 - nu) var_n(psi - phi) + nu var_n(psi)`` with the 1/n divisor."""
    psi_labeled = np.asarray(psi_labeled, dtype=float)
    if psi_labeled.shape[0] < 2:
        raise DataError("variance undefined for fewer than two observations")
    if psi_labeled.shape != imputed.at_labeled.shape:
        raise DataError("psi_labeled and imputations differ in length")
    if not 0.0 <= nu <= 1.0:
        raise DataError("nu must lie in [0, 1]")
    resid = np.var(psi_labeled - imputed.at_labeled)
    return float(max((1.0 - nu) * resid + nu * np.var(psi_labeled), 0.0))


def supervised_variance(tau, f_hat: DensityEstimate, n: int) -> float:
    """Asymptotic variance ``tau (1 - tau) / (n f^2)`` of the sample quantile."""
    tau = _as_tau(tau)
    _check_density(f_hat)
    return tau * (1.0 - tau) / (n * f_hat.value ** 2)


def confidence_interval(theta: float, se: float, level: float = 0.95) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise DataError("confidence level must lie strictly inside (0, 1)")
    if se < 0:
        raise DataError("standard error must be nonnegative")
    z = norm_ppf(1.0 - (1.0 - level) / 2.0)
    return (theta - z * se, theta + z * se)


@dataclass(frozen=True)
class InitialFit:
    """Quantities shared by every imputation strategy on one dataset."""

    theta_init: float
    f_hat: DensityEstimate
    psi_labeled: np.ndarray
    plan: FoldPlan
    tau: float


def initial_fit(data: Dataset, tau, K: int, seed: SeedLike) -> InitialFit:
    tau = _as_tau(tau)
    theta_init = sample_quantile(data.labeled_y, tau)
    f_hat = kde_density_at(data.labeled_y, theta_init)
    plan = make_fold_plan(data.n, K, make_rng(seed, 0))
    return InitialFit(theta_init=theta_init, f_hat=f_hat,
                      psi_labeled=psi(data.labeled_y, theta_init, tau), plan=plan, tau=tau)


def finish_fit(data: Dataset, init: InitialFit, imputed: ImputedValues,
               level: float = 0.95) -> QuantileFit:
    """Assemble the one-step estimate, plug-in standard errors and intervals."""
    theta_ss = one_step(init.theta_init, init.f_hat, imputed, init.psi_labeled)
    sigma2 = ss_variance(imputed, init.psi_labeled, data.nu)
    se_ss = math.sqrt(sigma2) / (math.sqrt(data.n) * init.f_hat.value)
    se_sup = math.sqrt(supervised_variance(init.tau, init.f_hat, data.n))
    return QuantileFit(
        theta_sup=init.theta_init, theta_init=init.theta_init, theta_ss=theta_ss,
        f_hat=init.f_hat, sigma2_ss=sigma2, se_ss=se_ss, se_sup=se_sup,
        ci_ss=confidence_interval(theta_ss, se_ss, level),
        ci_sup=confidence_interval(init.theta_init, se_sup, level),
        level=level, nu=data.nu, n=data.n, N=data.N,
        diagnostics={"fold_sizes": init.plan.sizes().tolist()},
    )


def estimate(data: Dataset, tau, strategy, K: int = 10, level: float = 0.95,
             seed: SeedLike = 0) -> QuantileFit:
    """Full pipeline: sample quantile, KDE, cross-fitted imputation, one-step update.

    The initial estimator is the supervised sample quantile, so ``theta_sup``
    and ``theta_init`` coincide. Deterministic given ``seed``.
    """
    init = initial_fit(data, tau, K, seed)
    imputed = cross_fit(data, strategy, init.plan, init.theta_init, seed=derive_seed(seed, 1))
    return finish_fit(data, init, imputed, level)
