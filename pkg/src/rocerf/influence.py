"""Leave-k-out approximation of retrained models and the robust score.

Deleting training point ``i`` moves the trained parameters, to first order,
by ``H^{-1} g_i / n``. With those influence vectors cached, the parameters
after removing a set ``S`` are approximated by
``theta_hat + (1/n) sum_{i in S} H^{-1} g_i`` and the score at ``x`` by
``f(x) + (1/n) sum_{i in S} beta(x)^T H^{-1} g_i`` where ``beta(x)`` is the
gradient of the score with respect to the parameters. The worst case over
all size-``k`` deletions is the sum of the ``k`` smallest influence terms.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Dataset
from .errors import (
    CacheFormatError,
    CgNonConvergence,
    DegenerateLabels,
    DimensionMismatch,
    IndexOutOfRange,
    KTooLarge,
    MissingFile,
    SizeMismatch,
)
from .io import atomic_write_bytes
from .models import DenseHessianFactor, LogRegConfig, MlpConfig, train_model


@dataclass(frozen=True)
class RemovalMask:
    """Training rows deleted before retraining (``w_i = 0`` exactly on these)."""

    removed: tuple[int, ...]
    n: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.removed))
        if len(set(idx)) != len(idx):
            raise IndexOutOfRange(f"duplicate indices in removal mask {idx}")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise IndexOutOfRange(f"removal indices must lie in [0, {self.n})")
        object.__setattr__(self, "removed", idx)

    @property
    def k(self) -> int:
        return len(self.removed)

    @property
    def weights(self) -> np.ndarray:
        w = np.ones(self.n)
        w[list(self.removed)] = 0.0
        return w

    def union(self, other: "RemovalMask") -> "RemovalMask":
        if other.n != self.n:
            raise SizeMismatch("masks over different training sets")
        return RemovalMask(tuple(set(self.removed) | set(other.removed)), self.n)


@dataclass(frozen=True)
class InfluenceCache:
    """Row ``i`` of ``vectors`` is ``(H + damping I)^{-1} g_i`` at the trained parameters."""

    vectors: np.ndarray
    theta_hat: np.ndarray
    damping: float = 0.0

    def __post_init__(self):
        V = np.ascontiguousarray(self.vectors, dtype=np.float64)
        t = np.array(self.theta_hat, dtype=np.float64)
        if V.ndim != 2 or V.shape[1] != t.shape[0]:
            raise SizeMismatch(f"vectors {V.shape} do not match parameters {t.shape}")
        V.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vectors", V)
        object.__setattr__(self, "theta_hat", t)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def p(self) -> int:
        return self.vectors.shape[1]


def build_influence_cache(model, train: Dataset, factor) -> InfluenceCache:
    G = model.per_sample_gradients(train)
    if isinstance(factor, DenseHessianFactor):
        V = factor.solve(G.T).T
    else:
        rows = []
        for i, g in enumerate(G):
            try:
                rows.append(factor.solve(g))
            except CgNonConvergence as exc:
                raise CgNonConvergence(f"influence solve for training point {i}: {exc}",
                                       residual=exc.residual, index=i) from exc
        V = np.vstack(rows) if rows else np.zeros((0, model.n_params))
    return InfluenceCache(V, model.theta, factor.damping)


def _check_mask(cache: InfluenceCache, mask: RemovalMask) -> None:
    if mask.n != cache.n:
        raise SizeMismatch(f"mask over {mask.n} points, cache over {cache.n}")


def approx_params(cache: InfluenceCache, mask: RemovalMask) -> np.ndarray:
    _check_mask(cache, mask)
    if not mask.removed:
        return cache.theta_hat.copy()
    return cache.theta_hat + cache.vectors[list(mask.removed)].sum(axis=0) / cache.n


def influence_set(cache: InfluenceCache, model, x) -> np.ndarray:
    """Entry ``i`` is ``beta(x)^T H^{-1} g_i``."""
    beta = model.param_gradient(x)
    if beta.shape[0] != cache.p:
        raise DimensionMismatch("model and cache disagree on the parameter dimension")
    return cache.vectors @ beta


def approx_score(cache: InfluenceCache, model, mask: RemovalMask, x) -> float:
    _check_mask(cache, mask)
    base = model.score(x)
    if not mask.removed:
        return base
    beta = model.param_gradient(x)
    return base + float(cache.vectors[list(mask.removed)].sum(axis=0) @ beta) / cache.n


def bottom_k_sum(values, k: int) -> tuple[float, np.ndarray]:
    """Sum of the ``k`` smallest entries and their positions (ascending).

    Uses linear-time partial selection; among equal values the lowest
    indices are taken.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[0]
    if k < 0 or k > n:
        raise KTooLarge(f"k={k} outside [0, {n}]")
    if k == 0:
        return 0.0, np.zeros(0, dtype=np.int64)
    if k == n:
        idx = np.arange(n)
    else:
        kth = np.partition(v, k - 1)[k - 1]
        below = np.flatnonzero(v < kth)
        ties = np.flatnonzero(v == kth)[: k - below.shape[0]]
        idx = np.sort(np.concatenate([below, ties]))
    return float(np.sum(v[idx])), idx


def _check_k(cache: InfluenceCache, k: int) -> None:
    if k < 0 or k > cache.n:
        raise KTooLarge(f"k={k} outside [0, {cache.n}]")


def robust_score(cache: InfluenceCache, model, x, k: int) -> float:
    """Score under the worst first-order deletion of ``k`` training points."""
    _check_k(cache, k)
    if k == 0:
        return model.score(x)
    total, _ = bottom_k_sum(influence_set(cache, model, x), k)
    return model.score(x) + total / cache.n


def worst_case_mask(cache: InfluenceCache, model, x, k: int) -> RemovalMask:
    _check_k(cache, k)
    _, idx = bottom_k_sum(influence_set(cache, model, x), k)
    return RemovalMask(tuple(idx.tolist()), cache.n)


def robust_value_and_gradient(cache: InfluenceCache, model, x, k: int):
    """``(robust_score, d robust_score / dx, selected indices)``.

    The gradient holds the bottom-k selection fixed, which is exact wherever
    the k-th and (k+1)-th smallest influence terms differ and a valid
    subgradient choice otherwise.
    """
    _check_k(cache, k)
    x = np.asarray(x, dtype=np.float64)
    if k == 0:
        return model.score(x), model.input_gradient(x), np.zeros(0, dtype=np.int64)
    A = influence_set(cache, model, x)
    total, idx = bottom_k_sum(A, k)
    value = model.score(x) + total / cache.n
    u = cache.vectors[idx].sum(axis=0) / cache.n
    if model.family == "logreg":
        g = model.weights + u[: model.d]
    else:
        _, _, g = model.directional_input_gradient(x, u)
    return value, g, idx


def robust_score_gradient(cache: InfluenceCache, model, x, k: int) -> np.ndarray:
    return robust_value_and_gradient(cache, model, x, k)[1]


def retrain_exact(train: Dataset, mask: RemovalMask, config, seed: int | None = None):
    """Train from scratch on the rows that survive ``mask``."""
    if mask.n != train.n:
        raise SizeMismatch(f"mask over {mask.n} points, training set has {train.n}")
    survivors = train.without(mask.removed) if mask.removed else train
    if not survivors.has_both_classes():
        raise DegenerateLabels("surviving rows contain a single class")
    if seed is not None and isinstance(config, MlpConfig):
        config = replace(config, seed=seed)
    return train_model(survivors, config)


def all_masks(n: int, k: int) -> Iterable[RemovalMask]:
    from itertools import combinations

    for combo in combinations(range(n), k):
        yield RemovalMask(combo, n)


# persistence ---------------------------------------------------------------
#
# Layout (little-endian):
#   0   8   magic b"ROCERFIC"
#   8   4   uint32 format version (1)
#   12  4   uint32 reserved (0)
#   16  8   uint64 n (training points)
#   24  8   uint64 p (parameter dimension)
#   32  8   float64 damping
#   40  32  SHA-256 of the payload
#   72  ... payload: theta_hat (p float64) then vectors (n*p float64, row-major)

CACHE_MAGIC = b"ROCERFIC"
CACHE_VERSION = 1
_HEADER = struct.Struct("<8sIIQQd32s")


def save_cache(cache: InfluenceCache, path: str | Path) -> None:
    payload = (cache.theta_hat.astype("<f8").tobytes()
               + cache.vectors.astype("<f8").tobytes(order="C"))
    digest = hashlib.sha256(payload).digest()
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, 0, cache.n, cache.p,
                          float(cache.damping), digest)
    atomic_write_bytes(path, header + payload)


def load_cache(path: str | Path) -> InfluenceCache:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CacheFormatError(f"{path}: truncated header")
    magic, version, _, n, p, damping, digest = _HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    payload = blob[_HEADER.size :]
    if len(payload) != 8 * p * (n + 1):
        raise CacheFormatError(f"{path}: payload size does not match n={n}, p={p}")
    if hashlib.sha256(payload).digest() != digest:
        raise CacheFormatError(f"{path}: cache checksum mismatch")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return InfluenceCache(arr[p:].reshape(n, p), arr[:p], damping)


__all__ = [
    "InfluenceCache",
    "LogRegConfig",
    "MlpConfig",
    "RemovalMask",
    "all_masks",
    "approx_params",
    "approx_score",
    "bottom_k_sum",
    "build_influence_cache",
    "influence_set",
    "load_cache",
    "retrain_exact",
    "robust_score",
    "robust_score_gradient",
    "robust_value_and_gradient",
    "save_cache",
    "worst_case_mask",
]
