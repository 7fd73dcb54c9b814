"""Feed-forward network: three hidden layers of width 2d with centered softplus.

Parameters live in one flat float64 vector so that the influence machinery
can treat them exactly like the logistic-regression coefficients. All
derivatives go through ``torch.func``; initialization and minibatch order
come from numpy's PCG64 generator, so training is reproducible from a seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import torch
from torch.func import grad, jvp, vmap
from torch.nn.functional import softplus

from ..data import Dataset
from ..errors import DegenerateLabels, DimensionMismatch, DivergedLoss, IndexOutOfRange

logger = logging.getLogger(__name__)

DTYPE = torch.float64
_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class MlpConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    gamma: float = 0.0
    hidden_factor: int = 2
    n_hidden: int = 3

    family = "mlp"


def centered_softplus(z: torch.Tensor) -> torch.Tensor:
    return softplus(z) - _LOG2


def layer_shapes(d: int, hidden_factor: int = 2, n_hidden: int = 3) -> list[tuple[int, int]]:
    """(fan_in, fan_out) for every affine layer, output head last."""
    width = hidden_factor * d
    dims = [d] + [width] * n_hidden + [1]
    return list(zip(dims[:-1], dims[1:]))


def param_count(d: int, hidden_factor: int = 2, n_hidden: int = 3) -> int:
    return sum(i * o + o for i, o in layer_shapes(d, hidden_factor, n_hidden))


def _unflatten(flat: torch.Tensor, shapes):
    out, pos = [], 0
    for fan_in, fan_out in shapes:
        W = flat[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def forward(flat: torch.Tensor, x: torch.Tensor, shapes) -> torch.Tensor:
    """Scores for a single row ``x`` (shape ``(d,)``) or a batch ``(m, d)``."""
    layers = _unflatten(flat, shapes)
    h = x
    for W, b in layers[:-1]:
        h = centered_softplus(h @ W.T + b)
    W, b = layers[-1]
    return (h @ W.T + b)[..., 0]


def init_params(shapes, seed: int) -> np.ndarray:
    # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in shapes:
        bound = 1.0 / math.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(parts)


@dataclass(frozen=True)
class MlpClassifier:
    params: np.ndarray
    d: int
    gamma: float = 0.0
    config: MlpConfig = field(default_factory=MlpConfig)
    meta: dict = field(default_factory=dict, compare=False)

    family = "mlp"

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64)
        expected = param_count(self.d, self.config.hidden_factor, self.config.n_hidden)
        if p.shape != (expected,):
            raise DimensionMismatch(f"expected {expected} parameters, got {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @property
    def theta(self) -> np.ndarray:
        return self.params

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @cached_property
    def shapes(self):
        return layer_shapes(self.d, self.config.hidden_factor, self.config.n_hidden)

    @cached_property
    def _flat(self) -> torch.Tensor:
        return torch.from_numpy(self.params.copy())

    def _x(self, x) -> torch.Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise DimensionMismatch(f"expected {self.d} features, got {x.shape[-1]}")
        return torch.from_numpy(np.array(x, dtype=np.float64))

    def _f(self, flat, x):
        return forward(flat, x, self.shapes)

    def score(self, x) -> float:
        with torch.no_grad():
            return float(self._f(self._flat, self._x(x)))

    def scores(self, X) -> np.ndarray:
        with torch.no_grad():
            return self._f(self._flat, self._x(np.atleast_2d(X))).numpy().copy()

    def predict(self, X) -> np.ndarray:
        return np.where(self.scores(X) >= 0.0, 1, -1)

    def param_gradient(self, x) -> np.ndarray:
        xt = self._x(x)
        return grad(lambda p: self._f(p, xt))(self._flat).numpy().copy()

    def input_gradient(self, x) -> np.ndarray:
        return grad(lambda z: self._f(self._flat, z))(self._x(x)).numpy().copy()

    def directional_input_gradient(self, x, u) -> tuple[float, float, np.ndarray]:
        """Value and x-gradient of ``f(x) + beta(x)^T u``.

        Returns ``(f(x), beta(x)^T u, grad_x)``; the second term is a
        parameter-space directional derivative, differentiated again in x.
        """
        flat = self._flat
        ut = torch.from_numpy(np.asarray(u, dtype=np.float64))

        def fn(z):
            val, dirv = jvp(lambda p: self._f(p, z), (flat,), (ut,))
            return val + dirv, (val, dirv)

        g, (val, dirv) = grad(fn, has_aux=True)(self._x(x))
        return float(val), float(dirv), g.numpy().copy()

    def _sample_loss(self, flat, x, y):
        return torch.nn.functional.softplus(-y * self._f(flat, x)) + 0.5 * self.gamma * flat @ flat

    def per_sample_gradients(self, train: Dataset) -> np.ndarray:
        X = torch.from_numpy(np.array(train.features))
        y = torch.from_numpy(train.labels.astype(np.float64))
        g = vmap(grad(self._sample_loss), in_dims=(None, 0, 0))(self._flat, X, y)
        return g.numpy().copy()

    def per_sample_gradient(self, train: Dataset, i: int) -> np.ndarray:
        if not 0 <= i < train.n:
            raise IndexOutOfRange(f"index {i} outside [0, {train.n})")
        return self.per_sample_gradients(train.subset([i]))[0]

    def mean_loss(self, train: Dataset) -> float:
        X = torch.from_numpy(np.array(train.features))
        y = torch.from_numpy(train.labels.astype(np.float64))
        with torch.no_grad():
            return float(_mean_loss(self._flat, X, y, self.shapes, self.gamma))

    def hvp_operator(self, train: Dataset):
        """Return ``v -> H v`` for the mean training loss at the trained parameters."""
        X = torch.from_numpy(np.array(train.features))
        y = torch.from_numpy(train.labels.astype(np.float64))
        flat, shapes, gamma = self._flat, self.shapes, self.gamma
        loss_grad = grad(lambda p: _mean_loss(p, X, y, shapes, gamma))

        def matvec(v: np.ndarray) -> np.ndarray:
            vt = torch.from_numpy(np.ascontiguousarray(v, dtype=np.float64))
            return jvp(loss_grad, (flat,), (vt,))[1].numpy().copy()

        return matvec


def _mean_loss(flat, X, y, shapes, gamma):
    return torch.mean(softplus(-y * forward(flat, X, shapes))) + 0.5 * gamma * flat @ flat


def train_mlp(
    train: Dataset,
    config: MlpConfig | None = None,
    **overrides,
) -> MlpClassifier:
    """Minibatch SGD on the mean logistic loss plus ``(gamma/2)||theta||^2``."""
    config = replace(config or MlpConfig(), **overrides)
    if not train.has_both_classes():
        raise DegenerateLabels("training data must contain both classes")
    shapes = layer_shapes(train.d, config.hidden_factor, config.n_hidden)
    rng = np.random.default_rng(config.seed)
    flat = torch.from_numpy(init_params(shapes, int(rng.integers(2**63))))
    flat.requires_grad_(True)
    X = torch.from_numpy(np.array(train.features))
    y = torch.from_numpy(train.labels.astype(np.float64))
    n = train.n
    bs = max(1, min(config.batch_size, n))
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = torch.from_numpy(rng.permutation(n))
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss = _mean_loss(flat, X[idx], y[idx], shapes, config.gamma)
            (g,) = torch.autograd.grad(loss, flat)
            with torch.no_grad():
                flat -= lr * g
        if not torch.isfinite(flat).all():
            raise DivergedLoss(f"parameters became non-finite in epoch {epoch}", epoch=epoch)
    with torch.no_grad():
        final = float(_mean_loss(flat, X, y, shapes, config.gamma))
    if not math.isfinite(final):
        raise DivergedLoss(f"final loss is {final}", epoch=config.epochs - 1)
    return MlpClassifier(
        flat.detach().numpy().copy(), train.d, config.gamma, config,
        meta={"final_loss": final, "n_train": n},
    )
