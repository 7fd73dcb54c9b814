"""Counterfactual generation by a penalty method with a binary search on the multiplier.

Both generators minimize ``||x - x0||_2`` subject to ``c(x) >= threshold``:

* ``scfe``: ``c`` is the model score, threshold 0.
* ``rocerf``: ``c`` is the robust score (worst first-order deletion of ``k``
  training points), threshold ``delta``.

Each subproblem minimizes ``lam * max(target - c(x), 0)**2 + ||x - x0||``
by backtracking gradient descent started at ``x0``. The exact minimizer of
that relaxation always sits ``1 / (2 lam |grad c|)`` short of its target, so
the target is raised by a small ``target_margin`` above the threshold;
otherwise no finite multiplier would ever produce a feasible point.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import Infeasible, KTooLarge, NotNegativeSample, RocerfError
from .influence import InfluenceCache, robust_value_and_gradient

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RocerfConfig:
    k: int = 0
    delta: float = 0.0
    T: int = 20
    max_steps: int = 1000
    tol: float = 1e-6
    lambda_init: float = 0.1
    doubling_cap: int = 60
    halving_cap: int = 60
    eps: float = 1e-12
    target_margin: float = 1e-6
    armijo: float = 0.5
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.k < 0:
            raise KTooLarge(f"k must be non-negative, got {self.k}")
        if self.delta < 0 or self.T < 0 or self.max_steps < 1 or self.lambda_init <= 0:
            raise ValueError("invalid RocerfConfig")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CfeResult:
    x0: np.ndarray
    x_cf: np.ndarray
    cost_l2: float
    cost_l1: float
    feasible: bool
    constraint_value: float
    threshold: float
    iterations: int
    outer_iterations: int
    lambda_final: float | None
    method: str = "rocerf"
    trace: list = field(default_factory=list, repr=False)
    info: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = self.x0.tolist()
        d["x_cf"] = self.x_cf.tolist()
        return d


def penalty(z):
    """``max(z, 0)**2``."""
    return max(z, 0.0) ** 2


class ScoreConstraint:
    """``c(x) = f(x)``."""

    def __init__(self, model):
        self.model = model

    def value(self, x) -> float:
        return self.model.score(x)

    def value_and_grad(self, x):
        return self.model.score(x), self.model.input_gradient(x)


class RobustConstraint:
    """``c(x)`` = score under the worst first-order k-point deletion."""

    def __init__(self, cache: InfluenceCache, model, k: int):
        if k > cache.n:
            raise KTooLarge(f"k={k} exceeds training size {cache.n}")
        self.cache, self.model, self.k = cache, model, k

    def value(self, x) -> float:
        return self.value_and_grad(x)[0]

    def value_and_grad(self, x):
        v, g, _ = robust_value_and_gradient(self.cache, self.model, x, self.k)
        return v, g


def _clamp(x, lower, upper):
    if lower is not None or upper is not None:
        x = np.clip(x, lower, upper)
    return x


def inner_minimize(constraint, x0, lam: float, target: float, cfg: RocerfConfig,
                   x_start=None):
    """Minimize ``lam * penalty(target - c(x)) + sqrt(||x - x0||^2 + eps)``.

    Backtracking gradient descent: the trial step starts at 1.0 and is halved
    until the objective decreases by at least ``armijo * t * |grad|^2``;
    later iterations start from twice the last accepted step (never above
    1.0). Stops after ``max_steps`` or when the decrease falls below ``tol``
    (relative to ``max(1, J)``). Returns the best iterate and the number of
    steps taken.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    lower = None if cfg.lower is None else np.asarray(cfg.lower)
    upper = None if cfg.upper is None else np.asarray(cfg.upper)
    x = _clamp(x0.copy() if x_start is None else np.array(x_start, dtype=np.float64),
               lower, upper)

    def objective(z):
        c, gc = constraint.value_and_grad(z)
        diff = z - x0
        r = math.sqrt(float(diff @ diff) + cfg.eps)
        slack = target - c
        J = lam * penalty(slack) + r
        gJ = diff / r
        if slack > 0:
            gJ = gJ - 2.0 * lam * slack * gc
        return J, gJ

    J, gJ = objective(x)
    t_prev = 0.5
    steps = 0
    for steps in range(1, cfg.max_steps + 1):
        if not np.any(gJ):
            break
        t = min(1.0, 2.0 * t_prev)
        gg = float(gJ @ gJ)
        while True:
            cand = _clamp(x - t * gJ, lower, upper)
            Jc, gc = objective(cand)
            if Jc <= J - cfg.armijo * t * gg and Jc < J:
                break
            t *= 0.5
            if t < 1e-300:
                return x, steps
        decrease = J - Jc
        x, J, gJ, t_prev = cand, Jc, gc, t
        if decrease < cfg.tol * max(1.0, abs(J)):
            break
    return x, steps


def _penalty_search(constraint, x0, cfg: RocerfConfig, threshold: float, method: str,
                    raise_on_infeasible: bool = False) -> CfeResult:
    """Doubling/halving bracket on the multiplier, then ``T`` bisection steps."""
    x0 = np.asarray(x0, dtype=np.float64)
    target = threshold + cfg.target_margin
    stats = {"steps": 0, "solves": 0}
    trace = []

    def solve(lam):
        x, steps = inner_minimize(constraint, x0, lam, target, cfg)
        stats["steps"] += steps
        stats["solves"] += 1
        c = constraint.value(x)
        return x, c, c >= threshold

    def result(x, c, feasible, lam):
        diff = x - x0
        return CfeResult(x0.copy(), x, float(np.linalg.norm(diff)), float(np.abs(diff).sum()),
                         bool(feasible), float(c), threshold, stats["steps"], stats["solves"],
                         lam, method, trace)

    c0 = constraint.value(x0)
    if c0 >= threshold:
        return result(x0.copy(), c0, True, None)

    lam = cfg.lambda_init
    x, c, ok = solve(lam)
    trace.append(("init", lam, None, ok))
    feasible_x = (x, c, lam) if ok else None
    halvings = 0
    while ok and halvings < cfg.halving_cap:
        lam /= 2.0
        halvings += 1
        x, c, ok = solve(lam)
        trace.append(("halve", lam, None, ok))
        if ok:
            feasible_x = (x, c, lam)
    if ok:
        # x0 is (numerically) feasible for any multiplier
        return result(x, c, True, lam)

    lam_right = lam
    doublings = 0
    while not ok:
        if doublings >= cfg.doubling_cap:
            msg = (f"no feasible minimizer after {doublings} doublings "
                   f"(lambda={lam_right:.3g}, constraint={c:.6g} < {threshold:.6g})")
            if raise_on_infeasible:
                raise Infeasible(msg)
            logger.debug(msg)
            return result(x, c, False, lam_right)
        lam_right *= 2.0
        doublings += 1
        x, c, ok = solve(lam_right)
        trace.append(("double", lam, lam_right, ok))
    feasible_x = (x, c, lam_right)

    for _ in range(cfg.T):
        mid = 0.5 * (lam + lam_right)
        x, c, ok = solve(mid)
        if ok:
            lam_right = mid
            feasible_x = (x, c, mid)
        else:
            lam = mid
        trace.append(("bisect", lam, lam_right, ok))

    x, c, ok = solve(lam)
    if ok:
        return result(x, c, True, lam)
    x, c, lam_used = feasible_x
    return result(x, c, True, lam_used)


def _require_negative(model, x0):
    s = model.score(x0)
    if s >= 0:
        raise NotNegativeSample(f"sample already classified positive (score {s:.6g})")


def scfe(model, x0, cfg: RocerfConfig | None = None, raise_on_infeasible: bool = False) -> CfeResult:
    """Closest point (L2) with non-negative model score."""
    cfg = cfg or RocerfConfig()
    _require_negative(model, x0)
    return _penalty_search(ScoreConstraint(model), x0, cfg, 0.0, "scfe", raise_on_infeasible)


def rocerf(model, cache: InfluenceCache, x0, cfg: RocerfConfig,
           raise_on_infeasible: bool = False) -> CfeResult:
    """Closest point whose robust score reaches ``cfg.delta``.

    With ``k == 0`` the robust score is the plain score, so the same
    constraint object as :func:`scfe` is used and the outputs coincide.
    """
    _require_negative(model, x0)
    if cfg.k > cache.n:
        raise KTooLarge(f"k={cfg.k} exceeds training size {cache.n}")
    constraint = ScoreConstraint(model) if cfg.k == 0 else RobustConstraint(cache, model, cfg.k)
    return _penalty_search(constraint, x0, cfg, float(cfg.delta), "rocerf", raise_on_infeasible)


def batch_explain(model, cache, negatives: Sequence, method: str, cfg: RocerfConfig,
                  n_jobs: int = 1) -> list:
    """One result per input, in order; failures occupy their slot as the exception."""

    def one(x0):
        try:
            if method == "scfe":
                return scfe(model, x0, cfg)
            if method == "rocerf":
                return rocerf(model, cache, x0, cfg)
            raise ValueError(f"unknown method {method!r}")
        except RocerfError as exc:
            return exc

    if n_jobs > 1 and len(negatives) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(one, negatives))
    return [one(x0) for x0 in negatives]


CSV_COLUMNS = ("sample_id", "method", "feasible", "cost_l2", "cost_l1",
               "constraint_value", "iterations")


def results_to_csv(rows) -> str:
    """``rows`` is an iterable of ``(sample_id, method, result_or_exception)``."""
    lines = [",".join(CSV_COLUMNS)]
    for sid, method, res in rows:
        if isinstance(res, CfeResult):
            lines.append(f"{sid},{method},{str(res.feasible).lower()},{res.cost_l2!r},"
                         f"{res.cost_l1!r},{res.constraint_value!r},{res.iterations}")
        else:
            lines.append(f"{sid},{method},false,,,,0")
    return "\n".join(lines) + "\n"
