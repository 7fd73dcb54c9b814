"""Local linear surrogates of a black-box classifier, and robust recourse through them.

A surrogate is a logistic regression fitted to the black box's hard labels
on Gaussian perturbations of the query point. Deletion influence is then
computed with the logistic-regression gradient/Hessian formulas evaluated at
the surrogate parameters over the original training rows, and the linear
robust-recourse path runs against the surrogate. Validity should always be
judged against the black box (or its retrained versions), never the
surrogate itself.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import Dataset
from .errors import DegenerateLabels, RocerfError
from .influence import InfluenceCache
from .models import DenseHessianFactor, LinearClassifier, LogRegConfig, augment, train_logreg
from .models.linear import logistic_gradients, logistic_hessian
from .recourse import CfeResult, RocerfConfig, _require_negative, rocerf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SurrogateConfig:
    n_perturb: int = 10_000
    noise: float = 0.1
    noise_is_variance: bool = True  # N(0, 0.1) read as variance; False -> stddev
    gamma: float | None = None  # surrogate fit; None -> 1/n_perturb
    influence_gamma: float | None = None  # influence terms; None -> 1/n_train
    seed: int = 0
    fidelity_floor: float = 0.8
    widen_retries: int = 6  # on single-class perturbations, double sigma up to this often

    @property
    def sigma(self) -> float:
        return math.sqrt(self.noise) if self.noise_is_variance else float(self.noise)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma"] = self.sigma
        d["labels"] = "hard sign of the black-box score"
        d["weights"] = "uniform"
        return d


@dataclass(frozen=True)
class LocalSurrogate:
    model: LinearClassifier
    center: np.ndarray
    fit_accuracy: float
    sigma: float
    n_perturb: int

    @property
    def theta_local(self) -> np.ndarray:
        return self.model.theta

    def low_fidelity(self, floor: float = 0.8) -> bool:
        return self.fit_accuracy < floor


def fit_local_surrogate(
    blackbox,
    x0,
    n_perturb: int = 10_000,
    noise_sigma: float = 0.1,
    gamma: float | None = None,
    seed: int = 0,
    noise_is_variance: bool = True,
) -> LocalSurrogate:
    """Logistic regression on ``n_perturb`` hard-labelled perturbations of ``x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    sigma = math.sqrt(noise_sigma) if noise_is_variance else float(noise_sigma)
    rng = np.random.default_rng(seed)
    Z = x0 + sigma * rng.standard_normal((n_perturb, x0.shape[0]))
    y = np.where(blackbox.scores(Z) >= 0.0, 1, -1)
    if np.all(y == y[0]):
        raise DegenerateLabels(
            f"all {n_perturb} perturbations labelled {int(y[0]):+d}; widen the noise",
            present_class=int(y[0]),
        )
    model = train_logreg(Dataset(Z, y), gamma=gamma)
    acc = float(np.mean(model.predict(Z) == y))
    return LocalSurrogate(model, x0.copy(), acc, sigma, n_perturb)


def surrogate_influence_cache(surrogate: LocalSurrogate, train: Dataset,
                              gamma: float | None = None) -> InfluenceCache:
    """``H^{-1} g_i`` from the logistic formulas at the surrogate parameters.

    The surrogate is not the training-loss minimizer, so this is an
    interpretation rather than a first-order expansion around an optimum.
    """
    g = 1.0 / train.n if gamma is None else float(gamma)
    theta = surrogate.theta_local
    Xa = augment(train.features, surrogate.model.fit_intercept)
    G = logistic_gradients(theta, Xa, train.labels.astype(np.float64), g)
    factor = DenseHessianFactor(logistic_hessian(theta, Xa, g), 0.0)
    return InfluenceCache(factor.solve(G.T).T, theta, 0.0)


def rocerf_via_surrogate(
    blackbox,
    train: Dataset,
    x0,
    cfg: RocerfConfig,
    scfg: SurrogateConfig | None = None,
) -> CfeResult:
    """Robust counterfactual for ``blackbox`` through a local linear surrogate.

    ``cfg.k == 0`` gives plain SCFE on the surrogate. If the surrogate
    already scores ``x0`` non-negative, ``x0`` is returned unchanged (the
    surrogate offers no direction to move in).
    """
    scfg = scfg or SurrogateConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    _require_negative(blackbox, x0)
    sur = None
    noise = scfg.noise
    for attempt in range(scfg.widen_retries + 1):
        try:
            sur = fit_local_surrogate(blackbox, x0, scfg.n_perturb, noise, scfg.gamma,
                                      scfg.seed, scfg.noise_is_variance)
            break
        except DegenerateLabels:
            if attempt == scfg.widen_retries:
                raise
            # doubling sigma: variance scales by 4
            noise *= 4.0 if scfg.noise_is_variance else 2.0
    low = sur.low_fidelity(scfg.fidelity_floor)
    if low:
        logger.warning("surrogate fit accuracy %.3f below %.2f", sur.fit_accuracy,
                       scfg.fidelity_floor)
    info = {"surrogate": scfg.to_dict(), "fit_accuracy": sur.fit_accuracy,
            "low_fidelity": low, "sigma_used": sur.sigma}
    cache = surrogate_influence_cache(sur, train, scfg.influence_gamma)
    s0 = sur.model.score(x0)
    if s0 >= 0:
        info["surrogate_positive_at_x0"] = True
        res = CfeResult(x0.copy(), x0.copy(), 0.0, 0.0, True, s0, float(cfg.delta), 0, 0, None)
    else:
        res = rocerf(sur.model, cache, x0, cfg)
    res.method = "rocerf-surrogate" if cfg.k > 0 else "scfe-surrogate"
    res.info = info
    return res


def batch_via_surrogate(blackbox, train: Dataset, negatives, cfg: RocerfConfig,
                        scfg: SurrogateConfig | None = None, n_jobs: int = 1) -> list:
    """Per-sample surrogate recourse; failures occupy their slot as the exception.

    Sample ``j`` uses surrogate seed ``scfg.seed + j`` so samples are
    independent and the output does not depend on ``n_jobs``.
    """
    scfg = scfg or SurrogateConfig()

    def one(item):
        j, x0 = item
        try:
            return rocerf_via_surrogate(blackbox, train, x0, cfg, replace(scfg, seed=scfg.seed + j))
        except RocerfError as exc:
            return exc

    items = list(enumerate(negatives))
    if n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


__all__ = [
    "LocalSurrogate",
    "LogRegConfig",
    "SurrogateConfig",
    "batch_via_surrogate",
    "fit_local_surrogate",
    "rocerf_via_surrogate",
    "surrogate_influence_cache",
]
