"""Classifiers, their derivatives, and JSON persistence."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import CacheFormatError, MissingFile
from ..io import read_json, write_json
from .hessian import CgHessianFactor, DenseHessianFactor, build_hessian_factor, conjugate_gradient
from .linear import LinearClassifier, LogRegConfig, augment, fit_logistic, train_logreg
from .mlp import MlpClassifier, MlpConfig, param_count, train_mlp

__all__ = [
    "CgHessianFactor",
    "DenseHessianFactor",
    "LinearClassifier",
    "LogRegConfig",
    "MlpClassifier",
    "MlpConfig",
    "augment",
    "build_hessian_factor",
    "conjugate_gradient",
    "fit_logistic",
    "load_model",
    "param_count",
    "save_model",
    "score",
    "train_logreg",
    "train_mlp",
    "train_model",
]

MODEL_FORMAT = "rocerf-model"
MODEL_VERSION = 1


def train_model(train, config):
    """Train whichever family ``config`` describes."""
    if isinstance(config, LogRegConfig):
        return train_logreg(train, config=config)
    if isinstance(config, MlpConfig):
        return train_mlp(train, config)
    raise TypeError(f"unknown model config {type(config).__name__}")


def score(model, x) -> float:
    return model.score(x)


def model_to_dict(model) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "family": model.family,
        "n_params": model.n_params,
        "d": model.d,
        "gamma": model.gamma,
        "params": [float(v) for v in model.theta],
        "config": asdict(model.config),
        "meta": model.meta,
    }
    if model.family == "logreg":
        doc["fit_intercept"] = model.fit_intercept
    return doc


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise CacheFormatError("not a model document")
    if doc.get("version") != MODEL_VERSION:
        raise CacheFormatError(f"unsupported model version {doc.get('version')}")
    params = np.array(doc["params"], dtype=np.float64)
    if doc["family"] == "logreg":
        return LinearClassifier(params, float(doc["gamma"]), bool(doc["fit_intercept"]),
                                LogRegConfig(**doc["config"]), doc.get("meta", {}))
    if doc["family"] == "mlp":
        return MlpClassifier(params, int(doc["d"]), float(doc["gamma"]),
                             MlpConfig(**doc["config"]), doc.get("meta", {}))
    raise CacheFormatError(f"unknown model family {doc['family']!r}")


def save_model(model, path: str | Path) -> None:
    write_json(path, model_to_dict(model))


def load_model(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    return model_from_dict(read_json(path))
