"""Counterfactual explanations that stay valid when training data is deleted."""

from .data import Dataset, SplitSpec, make_synthetic_gaussians, split
from .errors import RocerfError
from .influence import (
    InfluenceCache,
    RemovalMask,
    approx_params,
    approx_score,
    bottom_k_sum,
    build_influence_cache,
    influence_set,
    retrain_exact,
    robust_score,
    robust_score_gradient,
)
from .models import LogRegConfig, MlpConfig, build_hessian_factor, train_logreg, train_mlp
from .recourse import CfeResult, RocerfConfig, batch_explain, rocerf, scfe

__version__ = "0.1.0"

__all__ = [
    "CfeResult",
    "Dataset",
    "InfluenceCache",
    "LogRegConfig",
    "MlpConfig",
    "RemovalMask",
    "RocerfConfig",
    "RocerfError",
    "SplitSpec",
    "approx_params",
    "approx_score",
    "batch_explain",
    "bottom_k_sum",
    "build_hessian_factor",
    "build_influence_cache",
    "influence_set",
    "make_synthetic_gaussians",
    "retrain_exact",
    "robust_score",
    "robust_score_gradient",
    "rocerf",
    "scfe",
    "split",
    "train_logreg",
    "train_mlp",
]
