"""Strategy construction from configuration tokens."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..dimred import DimRedSpec
from ..errors import ConfigError
from ..normal import norm_cdf
from .base import ClippedStrategy, OracleStrategy, ZeroStrategy
from .forest import ForestStrategy
from .kernel import KernelStrategy
from .logistic import LogisticStrategy

TOKENS = ("ks_ols", "ks_lasso", "ks_sir", "ks_sparse_sir", "logistic", "logistic_l1",
          "forest", "zero")

_KS_DIMRED = {"ks_ols": ("ols", 1), "ks_lasso": ("lasso", 1),
              "ks_sir": ("sir", 2), "ks_sparse_sir": ("sparse_sir", 2)}

_ORACLES: dict[str, Callable] = {}


def register_oracle(name: str, func: Callable) -> None:
    """Make ``oracle:<name>`` resolve to ``func(x, theta)``."""
    _ORACLES[name] = func


def make_strategy(token: str, tau: float, *, r: int | None = None, slices: int | None = None,
                  cv_folds: int = 10, n_trees: int = 500, mtry: int | None = None,
                  min_leaf: int = 5, clip: bool = False, oracle: Callable | None = None,
                  grid=None):
    """Build the imputation strategy named by ``token``.

    Kernel tokens use r=1 for the regression directions and r=2 for SIR
    unless ``r`` is given.
    """
    if token in _KS_DIMRED:
        method, r_default = _KS_DIMRED[token]
        spec = DimRedSpec(method, r=r or r_default, slices=slices, cv_folds=cv_folds)
        strat = KernelStrategy(tau, spec, None if grid is None else tuple(grid))
    elif token == "logistic":
        strat = LogisticStrategy(tau, 0.0, cv_folds)
    elif token == "logistic_l1":
        strat = LogisticStrategy(tau, "cv", cv_folds)
    elif token == "forest":
        strat = ForestStrategy(tau, n_trees, mtry, min_leaf)
    elif token == "zero":
        strat = ZeroStrategy()
    elif token.startswith("oracle:"):
        name = token.split(":", 1)[1]
        func = oracle or _ORACLES.get(name)
        if func is None:
            raise ConfigError(f"no oracle registered under {name!r}")
        strat = OracleStrategy(func, name)
    else:
        raise ConfigError(f"unknown strategy token {token!r}; expected one of "
                          f"{', '.join(TOKENS)} or oracle:<name>")
    return ClippedStrategy(strat, tau) if clip else strat


def gaussian_oracle(mean_fn: Callable, tau: float) -> Callable:
    """phi(x, theta) = Phi(theta - m(x)) - tau for Y | X ~ N(m(X), 1)."""
    def func(x, theta):
        return norm_cdf(theta - mean_fn(np.atleast_2d(x))) - tau
    return func
