"""Monte Carlo harness: data-generating models, oracle constants, replications, metrics."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (Dataset, QuantileLevel, confidence_interval, cross_fit, finish_fit,
                   initial_fit, sample_quantile, supervised_variance)
from .errors import ConfigError, SSQError
from .normal import norm_cdf
from .nuisance.registry import gaussian_oracle, make_strategy
from .rng import SeedLike, derive_seed, make_rng, token_key

MODELS = ("a", "b", "c", "d", "e")
SUPERVISED = "supervised"
ORACLE_DRAWS = 100_000


@dataclass(frozen=True)
class DgpSpec:
    model: str
    p: int
    n: int
    N: int
    q: int | None = None
    tau: float = 0.5

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.p < 1 or self.n < 2 or self.N < 0:
            raise ConfigError("need p >= 1, n >= 2 and N >= 0")
        if self.q is None:
            object.__setattr__(self, "q", self.p)
        if not 1 <= self.q <= self.p:
            raise ConfigError(f"q={self.q} must lie in [1, p={self.p}]")
        QuantileLevel(self.tau)

    @property
    def nu(self) -> float:
        return self.n / (self.n + self.N)


def mean_function(model: str, x, q: int) -> np.ndarray:
    """Conditional mean m(x) of the five simulation models, row-wise."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if q > x.shape[1]:
        raise ConfigError(f"q={q} exceeds the covariate dimension {x.shape[1]}")
    xq = x[:, :q]
    s = xq.sum(axis=1)
    if model == "a":
        out = np.zeros(x.shape[0])
    elif model == "b":
        out = s
    elif model == "c":
        out = s + s ** 2 / q
    elif model == "d":
        half = math.ceil(q / 2)
        out = s * (1.0 + 2.0 * xq[:, q - half:].sum(axis=1) / q)
    elif model == "e":
        out = s + np.sum(xq ** 2, axis=1) / 3.0
    else:
        raise ConfigError(f"unknown model {model!r}")
    return out[0] if squeeze else out


def gen_dataset(spec: DgpSpec, rng: np.random.Generator) -> Dataset:
    """X ~ N(0, I_p) for all n + N rows; Y | X ~ N(m(X), 1) on the first n."""
    x = rng.standard_normal((spec.n + spec.N, spec.p))
    y = mean_function(spec.model, x[:spec.n], spec.q) + rng.standard_normal(spec.n)
    return Dataset(labeled_y=y, labeled_x=x[:spec.n], unlabeled_x=x[spec.n:])


@dataclass(frozen=True)
class OracleConstants:
    theta0: float
    sigma2_sup: float
    sigma2_eff: float
    ore: float


def oracle_constants(spec: DgpSpec, m_oracle: int = ORACLE_DRAWS,
                     rng: np.random.Generator | None = None) -> OracleConstants:
    """theta0 and the supervised and efficient variances by Monte Carlo.

    E{psi | X} = Phi(theta0 - m(X)) - tau is exact under unit-variance normal
    errors, so only the outer expectation is simulated. The efficient
    variance uses var{psi - E(psi|X)} = tau(1 - tau) - var{E(psi|X)}.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tau = spec.tau
    x = rng.standard_normal((m_oracle, spec.p))
    mx = mean_function(spec.model, x, spec.q)
    theta0 = sample_quantile(mx + rng.standard_normal(m_oracle), tau)
    sigma2_sup = tau * (1.0 - tau)
    cond = norm_cdf(theta0 - mx) - tau
    resid = max(sigma2_sup - float(np.var(cond)), 0.0)
    sigma2_eff = (1.0 - spec.nu) * resid + spec.nu * sigma2_sup
    return OracleConstants(theta0=float(theta0), sigma2_sup=sigma2_sup,
                           sigma2_eff=sigma2_eff, ore=sigma2_sup / sigma2_eff)


@dataclass(frozen=True)
class MethodResult:
    theta: float
    se: float
    ci: tuple[float, float]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    supervised: MethodResult
    methods: dict[str, MethodResult]


def _strategy(token: str, spec: DgpSpec, params: dict):
    if token.startswith("oracle:"):
        return make_strategy(token, spec.tau,
                             oracle=gaussian_oracle(lambda x: mean_function(spec.model, x, spec.q),
                                                    spec.tau))
    return make_strategy(token, spec.tau, **params)


def fit_methods(data: Dataset, tau: float, methods: Sequence[str], make: Callable,
                K: int = 10, seed: SeedLike = 0, level: float = 0.95):
    """Supervised baseline plus every method on one dataset.

    All methods share the initial estimate, density and fold plan; each method
    draws its own stream keyed by its token, so its result does not depend
    on which other methods run alongside it. A method that raises is
    recorded with its message instead of aborting.
    """
    init = initial_fit(data, tau, K, derive_seed(seed, 1))
    se_sup = math.sqrt(supervised_variance(tau, init.f_hat, data.n))
    sup = MethodResult(init.theta_init, se_sup, confidence_interval(init.theta_init, se_sup, level))
    results = {}
    for token in methods:
        try:
            imputed = cross_fit(data, make(token), init.plan, init.theta_init,
                                seed=derive_seed(seed, 2, token_key(token)))
            fit = finish_fit(data, init, imputed, level)
            results[token] = MethodResult(fit.theta_ss, fit.se_ss, fit.ci_ss)
        except SSQError as exc:
            results[token] = MethodResult(math.nan, math.nan, (math.nan, math.nan),
                                          f"{type(exc).__name__}: {exc}")
    return sup, results


def run_replication(spec: DgpSpec, methods: Sequence[str], K: int = 10, seed: SeedLike = 0,
                    level: float = 0.95, index: int = 0,
                    strategy_params: dict | None = None) -> ReplicationResult:
    """Generate one dataset and run the supervised baseline and every method on it."""
    params = strategy_params or {}
    data = gen_dataset(spec, make_rng(seed, 0))
    sup, results = fit_methods(data, spec.tau, methods,
                               lambda tok: _strategy(tok, spec, params), K, seed, level)
    return ReplicationResult(index, sup, results)


def summarize(ss: Sequence[MethodResult], sup: Sequence[MethodResult], target: float) -> dict:
    """Monte Carlo summaries against ``target`` over the successful replications.

    RE is MSE(supervised) / MSE(method), computed on the same replications.
    """
    ok = [i for i, r in enumerate(ss) if r.ok]
    out = {"replications": len(ok), "failures": len(ss) - len(ok)}
    if not ok:
        return {**out, **dict.fromkeys(
            ("estimate", "se", "ci_lo", "ci_hi", "re", "ese", "ase", "bias", "cr"), math.nan)}
    th = np.array([ss[i].theta for i in ok])
    se = np.array([ss[i].se for i in ok])
    lo = np.array([ss[i].ci[0] for i in ok])
    hi = np.array([ss[i].ci[1] for i in ok])
    th_sup = np.array([sup[i].theta for i in ok])
    mse_ss = float(np.mean((th - target) ** 2))
    mse_sup = float(np.mean((th_sup - target) ** 2))
    return {**out,
            "estimate": float(th.mean()), "se": float(se.mean()),
            "ci_lo": float(lo.mean()), "ci_hi": float(hi.mean()),
            "re": mse_sup / mse_ss if mse_ss > 0 else (1.0 if mse_sup == 0 else math.inf),
            "ese": float(np.std(th, ddof=1)) if len(ok) > 1 else math.nan,
            "ase": float(se.mean()), "bias": float(th.mean() - target),
            "cr": float(np.mean((lo <= target) & (target <= hi)))}


@dataclass(frozen=True)
class MetricsRow:
    method: str
    model: str
    n: int
    N: int
    p: int
    q: int
    tau: float
    re: float
    ese: float
    ase: float
    bias: float
    cr: float
    replications: int
    failures: int


@dataclass
class MetricsTable:
    rows: list[MetricsRow]
    oracle: OracleConstants | None = None
    config: dict = field(default_factory=dict)

    def row(self, method: str) -> MetricsRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def as_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def _row(method: str, spec: DgpSpec, stats: dict) -> MetricsRow:
    return MetricsRow(method, spec.model, spec.n, spec.N, spec.p, spec.q, spec.tau,
                      stats["re"], stats["ese"], stats["ase"], stats["bias"], stats["cr"],
                      stats["replications"], stats["failures"])


def aggregate(spec: DgpSpec, methods: Sequence[str], reps: Sequence[ReplicationResult],
              oracle: OracleConstants) -> list[MetricsRow]:
    reps = sorted(reps, key=lambda r: r.index)
    sup = [r.supervised for r in reps]
    rows = [_row(SUPERVISED, spec, summarize(sup, sup, oracle.theta0))]
    for token in methods:
        rows.append(_row(token, spec, summarize([r.methods[token] for r in reps], sup,
                                                oracle.theta0)))
    return rows


def run_study(spec: DgpSpec, methods: Sequence[str], K: int = 10, replications: int = 500,
              level: float = 0.95, master_seed: int = 1, workers: int = 1,
              m_oracle: int = ORACLE_DRAWS, strategy_params: dict | None = None,
              progress: Callable[[int], None] | None = None) -> MetricsTable:
    """Replicate, aggregate and attach the oracle constants.

    Replication ``i`` uses the stream derived from ``(master_seed, i)``, and
    aggregation sorts by replication index, so the table does not depend
    on ``workers``.
    """
    if replications < 2:
        raise ConfigError("need at least two replications")
    methods = list(methods)
    if SUPERVISED in methods:
        raise ConfigError("the supervised baseline is always included; do not list it")
    oracle = oracle_constants(spec, m_oracle, make_rng(master_seed, token_key("oracle"), 0))

    def task(i):
        res = run_replication(spec, methods, K, derive_seed(master_seed, i), level, i,
                              strategy_params)
        if progress is not None:
            progress(i)
        return res

    if workers <= 1:
        reps = [task(i) for i in range(replications)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(task, range(replications)))
    config = {"model": spec.model, "p": spec.p, "q": spec.q, "n": spec.n, "N": spec.N,
              "tau": spec.tau, "methods": ",".join(methods), "folds": K,
              "reps": replications, "level": level, "seed": master_seed,
              "oracle_draws": m_oracle}
    return MetricsTable(aggregate(spec, methods, reps, oracle), oracle, config)
