"""Survival energy model mortality forecasting with functional data analysis."""

from .core import KeyKind, SemParams, conditional, log_norm_cdf, norm_cdf, q_id, q_ig

__version__ = "0.1.0"

__all__ = [
    "KeyKind",
    "SemParams",
    "conditional",
    "log_norm_cdf",
    "norm_cdf",
    "q_id",
    "q_ig",
]
