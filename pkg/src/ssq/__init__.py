"""Semi-supervised quantile estimation with cross-fitted one-step updates."""
from .core import (Dataset, DensityEstimate, FoldPlan, ImputedValues, QuantileFit, QuantileLevel,
                   confidence_interval, cross_fit, estimate, kde_density_at, make_fold_plan,
                   one_step, psi, sample_quantile, ss_variance, supervised_variance)
from .dimred import DimRedSpec, Projection, fit_projection
from .errors import ConfigError, DataError, NumericalError, SSQError, ZeroDirectionError
from .nuisance import make_strategy
from .simulation import DgpSpec, gen_dataset, oracle_constants, run_replication, run_study

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DensityEstimate", "FoldPlan", "ImputedValues", "QuantileFit", "QuantileLevel",
    "confidence_interval", "cross_fit", "estimate", "kde_density_at", "make_fold_plan",
    "one_step", "psi", "sample_quantile", "ss_variance", "supervised_variance",
    "DimRedSpec", "Projection", "fit_projection",
    "ConfigError", "DataError", "NumericalError", "SSQError", "ZeroDirectionError",
    "make_strategy", "DgpSpec", "gen_dataset", "oracle_constants", "run_replication",
    "run_study",
]
