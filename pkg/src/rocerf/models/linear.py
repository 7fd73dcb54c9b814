"""L2-regularized logistic regression trained by damped Newton.

Per-sample loss::

    l_i(theta) = log(1 + exp(-y_i theta^T x_i)) + (gamma / 2) ||theta||^2

so that ``g_i = -sigmoid(-y_i theta^T x_i) y_i x_i + gamma theta`` and
``h_i = s_i (1 - s_i) x_i x_i^T + gamma I`` hold exactly. When
``fit_intercept`` is on, ``x`` is augmented with a trailing constant 1 and
the intercept is the last entry of ``theta`` (regularized like the rest).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from ..data import Dataset
from ..errors import DegenerateLabels, DimensionMismatch, IndexOutOfRange, NonConvergence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LogRegConfig:
    gamma: float | None = None  # None -> 1/n, the sklearn C=1 equivalent
    newton_tol: float = 1e-10
    max_iters: int = 100
    fit_intercept: bool = True

    family = "logreg"

    def resolved_gamma(self, n: int) -> float:
        return float(self.gamma) if self.gamma is not None else 1.0 / n


def augment(X: np.ndarray, fit_intercept: bool) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if not fit_intercept:
        return X
    if X.ndim == 1:
        return np.append(X, 1.0)
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass(frozen=True)
class LinearClassifier:
    """Linear score ``f(x) = theta^T [x, 1]`` (or ``theta^T x`` without intercept)."""

    theta: np.ndarray
    gamma: float
    fit_intercept: bool = True
    config: LogRegConfig = field(default_factory=LogRegConfig)
    meta: dict = field(default_factory=dict, compare=False)

    family = "logreg"

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.n_params - int(self.fit_intercept)

    @property
    def weights(self) -> np.ndarray:
        """Coefficients on the input features (intercept excluded)."""
        return self.theta[: self.d]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise DimensionMismatch(f"expected {self.d} features, got {x.shape[-1]}")
        return x

    def score(self, x) -> float:
        x = self._check(x)
        return float(augment(x, self.fit_intercept) @ self.theta)

    def scores(self, X) -> np.ndarray:
        X = self._check(np.atleast_2d(X))
        return augment(X, self.fit_intercept) @ self.theta

    def predict(self, X) -> np.ndarray:
        return np.where(self.scores(X) >= 0.0, 1, -1)

    def param_gradient(self, x) -> np.ndarray:
        """d f / d theta at ``x``: the augmented input itself."""
        return augment(self._check(x), self.fit_intercept)

    def input_gradient(self, x) -> np.ndarray:
        self._check(x)
        return self.weights.copy()

    def per_sample_gradients(self, train: Dataset) -> np.ndarray:
        return logistic_gradients(self.theta, augment(train.features, self.fit_intercept),
                                  train.labels, self.gamma)

    def per_sample_gradient(self, train: Dataset, i: int) -> np.ndarray:
        if not 0 <= i < train.n:
            raise IndexOutOfRange(f"index {i} outside [0, {train.n})")
        return self.per_sample_gradients(train.subset([i]))[0]

    def hessian(self, train: Dataset) -> np.ndarray:
        return logistic_hessian(self.theta, augment(train.features, self.fit_intercept),
                                self.gamma)


def logistic_losses(theta, Xa, y, gamma) -> np.ndarray:
    margins = y * (Xa @ theta)
    return np.logaddexp(0.0, -margins) + 0.5 * gamma * float(theta @ theta)


def logistic_gradients(theta, Xa, y, gamma) -> np.ndarray:
    """Rows are g_i(theta) for each sample."""
    coef = -expit(-y * (Xa @ theta)) * y
    return coef[:, None] * Xa + gamma * theta[None, :]


def logistic_hessian(theta, Xa, gamma, weights=None) -> np.ndarray:
    """(1/n) sum_i h_i(theta), or the weighted mean when ``weights`` is given."""
    s = expit(Xa @ theta)
    c = s * (1.0 - s)
    if weights is None:
        c = c / Xa.shape[0]
    else:
        c = c * weights / np.sum(weights)
    H = (Xa * c[:, None]).T @ Xa
    H[np.diag_indices_from(H)] += gamma
    return H


def fit_logistic(
    Xa: np.ndarray,
    y: np.ndarray,
    gamma: float,
    newton_tol: float = 1e-10,
    max_iters: int = 100,
    theta0: np.ndarray | None = None,
) -> tuple[np.ndarray, int, float]:
    """Damped Newton on the mean regularized logistic loss.

    Returns ``(theta, iterations, final_gradient_norm)``; raises
    NonConvergence if the gradient norm stays above ``newton_tol``.
    """
    n, p = Xa.shape
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=np.float64)

    def objective(t):
        return float(np.mean(np.logaddexp(0.0, -y * (Xa @ t)))) + 0.5 * gamma * float(t @ t)

    def gradient(t):
        coef = -expit(-y * (Xa @ t)) * y
        return Xa.T @ coef / n + gamma * t

    f = objective(theta)
    g = gradient(theta)
    gnorm = float(np.linalg.norm(g))
    it = 0
    while gnorm > newton_tol and it < max_iters:
        it += 1
        H = logistic_hessian(theta, Xa, gamma)
        step = np.linalg.solve(H, g)
        # losses within rounding of each other count as no increase, otherwise
        # the search shrinks the step to nothing right at the optimum
        slack = 64 * np.finfo(np.float64).eps * max(1.0, abs(f))
        t = 1.0
        while True:
            cand = theta - t * step
            fc = objective(cand)
            if fc <= f + slack or t < 1e-12:
                break
            t *= 0.5
        if fc > f + slack:
            # no decrease available at machine precision; keep the full step
            cand, fc = theta - step, objective(theta - step)
        theta, f = cand, fc
        g = gradient(theta)
        gnorm = float(np.linalg.norm(g))
    if gnorm > newton_tol:
        raise NonConvergence(
            f"Newton stopped after {it} iterations with gradient norm {gnorm:.3e}",
            final_norm=gnorm,
        )
    return theta, it, gnorm


def train_logreg(
    train: Dataset,
    gamma: float | None = None,
    newton_tol: float = 1e-10,
    max_iters: int = 100,
    fit_intercept: bool = True,
    config: LogRegConfig | None = None,
) -> LinearClassifier:
    """Fit regularized logistic regression on ``train``.

    ``gamma=None`` uses ``1/n``, which matches an unpenalized-mean loss with
    inverse regularization strength 1.
    """
    if config is None:
        config = LogRegConfig(gamma, newton_tol, max_iters, fit_intercept)
    if not train.has_both_classes():
        raise DegenerateLabels("training data must contain both classes")
    g = config.resolved_gamma(train.n)
    if g <= 0:
        raise ValueError("gamma must be positive")
    # pin the numeric gamma so retraining on fewer rows reuses it
    config = replace(config, gamma=g)
    Xa = augment(train.features, config.fit_intercept)
    theta, iters, gnorm = fit_logistic(Xa, train.labels.astype(np.float64), g,
                                       config.newton_tol, config.max_iters)
    logger.debug("logreg converged in %d Newton steps (|grad|=%.2e)", iters, gnorm)
    return LinearClassifier(
        theta, g, config.fit_intercept, config,
        meta={"newton_iterations": iters, "gradient_norm": gnorm, "n_train": train.n},
    )
