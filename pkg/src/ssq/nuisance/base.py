"""Imputation-strategy contract and the trivial strategies.

A strategy is any object with ``fit(y, x, theta, rng) -> model``; a model
exposes a vectorized ``predict(x) -> ndarray``. ``fit`` must only look at the
rows it is handed, which is what makes cross-fitting honest.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from ..core import _as_tau, psi


class ImputationModel(Protocol):
    def predict(self, x) -> np.ndarray: ...


class ImputationStrategy(Protocol):
    def fit(self, y, x, theta: float, rng: np.random.Generator) -> ImputationModel: ...


@dataclass(frozen=True)
class ConstantModel:
    value: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[0] if x.ndim == 2 else 1, self.value)


@dataclass(frozen=True)
class ZeroStrategy:
    """phi == 0: the one-step update reduces to a Newton step on the supervised equation."""

    def fit(self, y, x, theta, rng=None) -> ConstantModel:
        return ConstantModel(0.0)


@dataclass(frozen=True)
class ConstantStrategy:
    value: float = 0.0

    def fit(self, y, x, theta, rng=None) -> ConstantModel:
        return ConstantModel(float(self.value))


@dataclass(frozen=True)
class FoldMeanStrategy:
    """Predicts the training mean of psi(Y, theta) everywhere."""

    tau: float

    def fit(self, y, x, theta, rng=None) -> ConstantModel:
        return ConstantModel(float(np.mean(psi(y, theta, _as_tau(self.tau)))))


@dataclass(frozen=True)
class FunctionModel:
    func: Callable
    theta: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        return np.asarray(self.func(x, self.theta), dtype=float).reshape(x.shape[0])


@dataclass(frozen=True)
class OracleStrategy:
    """Wraps a known ``func(x, theta)``; training data are ignored."""

    func: Callable
    name: str = "oracle"

    def fit(self, y, x, theta, rng=None) -> FunctionModel:
        return FunctionModel(self.func, float(theta))


@dataclass(frozen=True)
class ClippedModel:
    inner: ImputationModel
    lo: float
    hi: float

    def predict(self, x) -> np.ndarray:
        return np.clip(self.inner.predict(x), self.lo, self.hi)


@dataclass(frozen=True)
class ClippedStrategy:
    """Clip imputations into ``[-tau - slack, 1 - tau + slack]``."""

    inner: ImputationStrategy
    tau: float
    slack: float = 0.0

    def fit(self, y, x, theta, rng=None) -> ClippedModel:
        return ClippedModel(self.inner.fit(y, x, theta, rng),
                            -self.tau - self.slack, 1.0 - self.tau + self.slack)
