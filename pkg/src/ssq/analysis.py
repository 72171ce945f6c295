"""Subsampling study on a fully labeled data set.

Each replication keeps ``n_labeled`` randomly chosen responses and hides the
rest, which become unlabeled covariate rows. Methods are scored against the
gold-standard quantile of the full sample.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, _as_tau, kde_density_at, sample_quantile
from .errors import ConfigError, DataError
from .nuisance.registry import make_strategy
from .rng import derive_seed, make_rng
from .simulation import SUPERVISED, fit_methods, summarize

COLUMNS = ("method", "estimate", "se", "ci_lo", "ci_hi", "re", "ese", "bias", "cr",
           "replications", "failures")


@dataclass
class AnalysisReport:
    rows: list[dict]
    gold: dict
    config: dict = field(default_factory=dict)

    def row(self, method: str) -> dict:
        for r in self.rows:
            if r["method"] == method:
                return r
        raise KeyError(method)


def zscore(x, skip: Sequence[int] = ()) -> np.ndarray:
    """Center and scale columns with the population sd, leaving ``skip`` untouched."""
    x = np.array(x, dtype=float)
    for j in range(x.shape[1]):
        if j in skip:
            continue
        sd = x[:, j].std()
        if sd > 0:
            x[:, j] = (x[:, j] - x[:, j].mean()) / sd
    return x


def gold_standard(y, tau: float) -> dict:
    """Full-sample quantile and its supervised plug-in standard error."""
    theta = sample_quantile(y, tau)
    f = kde_density_at(y, theta)
    return {"theta": theta, "se": math.sqrt(tau * (1 - tau) / (len(y) * f.value ** 2)),
            "f_hat": f.value, "rows": len(y)}


def run_analysis(y, x, n_labeled: int, methods: Sequence[str], tau: float = 0.5,
                 reps: int = 500, K: int = 10, level: float = 0.95, seed: int = 1,
                 workers: int = 1, strategy_params: dict | None = None) -> AnalysisReport:
    tau = _as_tau(tau)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    M = y.shape[0]
    if reps < 2:
        raise ConfigError("need at least two replications")
    if not n_labeled < M:
        raise DataError(f"n_labeled={n_labeled} must be smaller than the {M} available rows")
    if n_labeled < 2 * K:
        raise DataError(f"n_labeled={n_labeled} too small for {K} folds (need >= {2 * K})")
    methods = list(methods)
    params = strategy_params or {}
    gold = gold_standard(y, tau)

    def task(i):
        idx = make_rng(seed, i, 0).permutation(M)
        lab, rest = idx[:n_labeled], idx[n_labeled:]
        data = Dataset(labeled_y=y[lab], labeled_x=x[lab], unlabeled_x=x[rest])
        return fit_methods(data, tau, methods, lambda t: make_strategy(t, tau, **params),
                           K, derive_seed(seed, i), level)

    if workers <= 1:
        out = [task(i) for i in range(reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(task, range(reps)))
    sup = [o[0] for o in out]
    rows = [{"method": SUPERVISED, **summarize(sup, sup, gold["theta"])}]
    for token in methods:
        rows.append({"method": token,
                     **summarize([o[1][token] for o in out], sup, gold["theta"])})
    rows = [{c: r[c] for c in COLUMNS} for r in rows]
    config = {"n_labeled": n_labeled, "rows": M, "tau": tau, "reps": reps, "folds": K,
              "level": level, "seed": seed, "methods": ",".join(methods)}
    return AnalysisReport(rows, gold, config)
