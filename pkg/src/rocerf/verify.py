"""Desk-scale property suite behind ``rocerf verify``.

Each check returns ``(name, passed, detail)``; nothing here raises on a
failed property.
"""

from __future__ import annotations

import itertools
import tempfile
from pathlib import Path

import numpy as np

from .data import make_synthetic_gaussians
from .harness import estimate_delta, exhaustive_validity_oracle
from .influence import (
    all_masks,
    approx_params,
    bottom_k_sum,
    build_influence_cache,
    load_cache,
    retrain_exact,
    robust_score,
    robust_value_and_gradient,
    save_cache,
)
from .models import build_hessian_factor, train_logreg
from .recourse import RocerfConfig, batch_explain, rocerf, scfe


def _fixture(seed: int, n_per_class: int = 20, gamma: float = 0.1):
    train = make_synthetic_gaussians(n_per_class, 2, 3.0, seed)
    model = train_logreg(train, gamma=gamma)
    cache = build_influence_cache(model, train, build_hessian_factor(model, train))
    return train, model, cache


def _negatives(model, seed: int, count: int = 10) -> np.ndarray:
    pool = make_synthetic_gaussians(200, 2, 3.0, 1000 + seed).features
    return pool[model.scores(pool) < 0][:count]


def check_bottom_k(seed: int) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 11))
        k = int(rng.integers(0, min(n, 4) + 1))
        v = rng.standard_normal(n)
        brute = min((sum(v[list(c)]) for c in itertools.combinations(range(n), k)), default=0.0)
        worst = max(worst, abs(bottom_k_sum(v, k)[0] - brute))
    return "bottom-k exactness", worst <= 1e-12, f"max abs error {worst:.2e}"


def check_gradients(seed: int) -> tuple[str, bool, str]:
    train, model, cache = _fixture(seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-6
    for _ in range(20):
        x = rng.standard_normal(2)
        k = int(rng.integers(1, 4))
        A = np.sort(cache.vectors @ model.param_gradient(x))
        if A[k] - A[k - 1] < 1e-8:
            continue
        _, g, _ = robust_value_and_gradient(cache, model, x, k)
        fd = np.array([(robust_score(cache, model, x + h * e, k)
                        - robust_score(cache, model, x - h * e, k)) / (2 * h)
                       for e in np.eye(2)])
        worst = max(worst, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12)))
    return "robust-score gradient", worst < 1e-4, f"max relative error {worst:.2e}"


def check_lko_fidelity(seed: int) -> tuple[str, bool, str]:
    train, model, cache = _fixture(seed)
    better = 0
    total = 0
    for mask in all_masks(train.n, 1):
        exact = retrain_exact(train, mask, model.config).theta
        approx = approx_params(cache, mask)
        better += np.linalg.norm(approx - exact) < np.linalg.norm(model.theta - exact)
        total += 1
    return "leave-one-out fidelity", bool(better >= 0.95 * total), f"{better}/{total} masks improved"


def check_identity(seed: int) -> tuple[str, bool, str]:
    train, model, cache = _fixture(seed)
    same = all(np.array_equal(scfe(model, x).x_cf, rocerf(model, cache, x, RocerfConfig()).x_cf)
               for x in _negatives(model, seed))
    return "k=0 identity with SCFE", same, "bitwise" if same else "outputs differ"


def check_scfe_closed_form(seed: int) -> tuple[str, bool, str]:
    _, model, _ = _fixture(seed)
    worst = 0.0
    for x in _negatives(model, seed):
        expected = -model.score(x) / np.linalg.norm(model.weights)
        worst = max(worst, abs(scfe(model, x).cost_l2 - expected) / expected)
    return "SCFE closed form", bool(worst <= 1e-4), f"max relative cost error {worst:.2e}"


def check_exhaustive(seed: int, k: int = 2) -> tuple[str, bool, str]:
    train, model, cache = _fixture(seed)
    X_val = make_synthetic_gaussians(100, 2, 3.0, 2000 + seed).features
    delta = estimate_delta(train, X_val, model, cache, k, 20, seed=seed, targeted=True)
    neg = _negatives(model, seed)
    res = batch_explain(model, cache, neg, "rocerf", RocerfConfig(k=k, delta=delta))
    out = exhaustive_validity_oracle(train, k, {"rocerf": res}, model.config)["rocerf"]
    return ("exhaustive k-removal validity", out.worst_validity == 1.0,
            f"worst validity {out.worst_validity:.3f} over {out.n_models} retrains (delta {delta:.3f})")


def check_cache_roundtrip(seed: int) -> tuple[str, bool, str]:
    _, _, cache = _fixture(seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "influence.cache"
        save_cache(cache, path)
        back = load_cache(path)
    ok = np.array_equal(back.vectors, cache.vectors) and np.array_equal(back.theta_hat,
                                                                        cache.theta_hat)
    return "cache round trip", ok, "bit-exact" if ok else "mismatch"


CHECKS = (
    check_bottom_k,
    check_gradients,
    check_lko_fidelity,
    check_identity,
    check_scfe_closed_form,
    check_cache_roundtrip,
    check_exhaustive,
)


def run_suite(seed: int = 0) -> list[tuple[str, bool, str]]:
    return [check(seed) for check in CHECKS]


__all__ = ["CHECKS", "run_suite"]
