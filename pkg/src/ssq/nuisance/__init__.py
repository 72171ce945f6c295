"""Imputation strategies: kernel smoothing, logistic regression, random forest."""
from .base import (ClippedStrategy, ConstantModel, ConstantStrategy, FoldMeanStrategy,
                   ImputationModel, ImputationStrategy, OracleStrategy, ZeroStrategy)
from .forest import ForestModel, ForestStrategy, fit_forest
from .kernel import (KernelSmootherModel, KernelStrategy, cv_bandwidth, fit_kernel_strategy,
                     gaussian_product_kernel, nw_predict)
from .logistic import LogisticModel, LogisticStrategy, fit_logistic
from .registry import TOKENS, gaussian_oracle, make_strategy, register_oracle

__all__ = [
    "ClippedStrategy", "ConstantModel", "ConstantStrategy", "FoldMeanStrategy",
    "ImputationModel", "ImputationStrategy", "OracleStrategy", "ZeroStrategy",
    "ForestModel", "ForestStrategy", "fit_forest",
    "KernelSmootherModel", "KernelStrategy", "cv_bandwidth", "fit_kernel_strategy",
    "gaussian_product_kernel", "nw_predict",
    "LogisticModel", "LogisticStrategy", "fit_logistic",
    "TOKENS", "gaussian_oracle", "make_strategy", "register_oracle",
]
