"""Evaluation under data deletion: random-removal trials and an exhaustive oracle.

Validity of a counterfactual under a retrained model means the retrained
score at the counterfactual is ``>= 0``. Random trials delete
``ceil(alpha * n)`` training rows, retrain from scratch, and average validity
over the explained samples; the oracle retrains every size-``k`` deletion.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import CombinatoricsTooLarge, DegenerateLabels, UnpairedResults
from .influence import (
    InfluenceCache,
    RemovalMask,
    all_masks,
    approx_params,
    approx_score,
    retrain_exact,
    worst_case_mask,
)
from .models import augment
from .recourse import CfeResult

logger = logging.getLogger(__name__)


def removal_count(alpha: float, n: int) -> int:
    """``ceil(alpha * n)``, at least one."""
    # round first so 0.01 * 700 = 7.000000000000001 does not become 8
    return max(1, math.ceil(round(alpha * n, 9)))


def sample_mask(n: int, size: int, seed: int, trial: int, retry: int = 0) -> RemovalMask:
    """Uniform size-``size`` deletion that depends only on ``(seed, trial, retry)``."""
    rng = np.random.default_rng([seed, trial, retry])
    return RemovalMask(tuple(rng.choice(n, size=size, replace=False).tolist()), n)


def counterfactual_matrix(results: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``x_cf`` rows; failed slots become NaN rows and are marked invalid."""
    ok = np.array([isinstance(r, CfeResult) for r in results], dtype=bool)
    rows = [r.x_cf for r in results if isinstance(r, CfeResult)]
    d = rows[0].shape[0] if rows else 0
    X = np.full((len(results), d), np.nan)
    if rows:
        X[ok] = np.vstack(rows)
    return X, ok


def validity(model, X_cf: np.ndarray, ok: np.ndarray | None = None) -> np.ndarray:
    """Per-sample indicator ``f(x_cf) >= 0`` (failed slots count as invalid)."""
    out = np.zeros(X_cf.shape[0], dtype=bool)
    if ok is None:
        ok = ~np.isnan(X_cf).any(axis=1)
    if ok.any():
        out[ok] = model.scores(X_cf[ok]) >= 0.0
    return out


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se


@dataclass(frozen=True)
class TrialSpec:
    alpha: float
    M: int = 100
    seed: int = 0
    max_retries: int = 10

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.M < 1:
            raise ValueError("M must be positive")


@dataclass
class MethodStats:
    method: str
    alpha: float
    n_removed: int
    n_samples: int
    validity_mean: float
    validity_se: float
    cost_l2_mean: float
    cost_l2_se: float
    cost_l1_mean: float
    cost_l1_se: float
    series: list[float] = field(default_factory=list)


@dataclass
class EvalReport:
    """Per (method, alpha) aggregates plus the per-trial validity series.

    ``*_se`` fields are standard errors of the mean (sample std / sqrt(count)).
    """

    entries: list[MethodStats] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def get(self, method: str, alpha: float) -> MethodStats:
        for e in self.entries:
            if e.method == method and math.isclose(e.alpha, alpha):
                return e
        raise KeyError((method, alpha))

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.entries.extend(other.entries)
        return self

    def to_dict(self) -> dict:
        return {
            "standard_error": "standard error of the mean over trials (validity) "
                              "or over samples (cost)",
            "entries": [asdict(e) for e in self.entries],
            "provenance": self.provenance,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "alpha", "validity_mean", "validity_se", "cost_l2_mean",
                     "cost_l2_se", "cost_l1_mean", "cost_l1_se"])
        for e in self.entries:
            w.writerow([e.method, repr(e.alpha), repr(e.validity_mean), repr(e.validity_se),
                        repr(e.cost_l2_mean), repr(e.cost_l2_se), repr(e.cost_l1_mean),
                        repr(e.cost_l1_se)])
        return buf.getvalue()


def _map(fn, items, n_jobs):
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _retrain_trial(train: Dataset, config, size: int, spec: TrialSpec, m: int):
    for retry in range(spec.max_retries + 1):
        mask = sample_mask(train.n, size, spec.seed, m, retry)
        try:
            return mask, retrain_exact(train, mask, config)
        except DegenerateLabels:
            logger.warning("trial %d: single-class survivors, resampling (retry %d)", m, retry)
    raise DegenerateLabels(f"trial {m}: {spec.max_retries} resamples all single-class")


def run_removal_trials(
    train: Dataset,
    spec: TrialSpec,
    cfes: Mapping[str, Sequence],
    config,
    n_jobs: int = 1,
) -> EvalReport:
    """Average validity of each method's counterfactuals over ``spec.M`` random deletions.

    ``cfes`` maps a method name to its per-sample results (``CfeResult`` or
    the exception recorded for that sample). Every method is evaluated
    against the same retrained models.
    """
    size = removal_count(spec.alpha, train.n)
    prepared = {name: counterfactual_matrix(res) for name, res in cfes.items()}
    trials = _map(lambda m: _retrain_trial(train, config, size, spec, m), range(spec.M), n_jobs)
    series = {name: [] for name in cfes}
    for _, model in trials:
        for name, (X, ok) in prepared.items():
            v = validity(model, X, ok)
            series[name].append(float(v.mean()) if v.size else float("nan"))

    report = EvalReport(provenance={"trial_spec": asdict(spec), "n_train": train.n,
                                    "n_removed": size,
                                    "masks": [list(mk.removed) for mk, _ in trials]})
    for name, res in cfes.items():
        done = [r for r in res if isinstance(r, CfeResult)]
        vm, vse = _mean_se(series[name])
        c2, c2se = _mean_se([r.cost_l2 for r in done])
        c1, c1se = _mean_se([r.cost_l1 for r in done])
        report.entries.append(MethodStats(name, spec.alpha, size, len(res), vm, vse,
                                          c2, c2se, c1, c1se, series[name]))
    return report


def evaluate_alphas(train, alphas, cfes, config, M=100, seed=0, n_jobs=1) -> EvalReport:
    report = EvalReport(provenance={"alphas": list(alphas), "M": M, "seed": seed})
    for a in alphas:
        sub = run_removal_trials(train, TrialSpec(a, M, seed), cfes, config, n_jobs)
        report.entries.extend(sub.entries)
        report.provenance[f"alpha={a!r}"] = sub.provenance
    return report


@dataclass
class OracleResult:
    method: str
    k: int
    worst_validity: float
    witness: tuple[int, ...] | None
    n_models: int
    per_sample_always_valid: np.ndarray


def exhaustive_validity_oracle(
    train: Dataset,
    k: int,
    cfes: Mapping[str, Sequence],
    config,
    cap: int = 20_000,
    n_jobs: int = 1,
) -> dict[str, OracleResult]:
    """Retrain on every size-``k`` deletion; report the worst validity per method.

    ``cfes`` values may be result lists or plain ``(m, d)`` arrays of
    counterfactuals.
    """
    total = math.comb(train.n, k)
    if total > cap:
        raise CombinatoricsTooLarge(f"C({train.n},{k}) = {total} exceeds cap {cap}")
    prepared = {}
    for name, res in cfes.items():
        if isinstance(res, np.ndarray):
            prepared[name] = (res, np.ones(res.shape[0], dtype=bool))
        else:
            prepared[name] = counterfactual_matrix(res)

    def one(mask):
        model = retrain_exact(train, mask, config)
        return {name: validity(model, X, ok) for name, (X, ok) in prepared.items()}

    masks = list(all_masks(train.n, k))
    outcomes = _map(one, masks, n_jobs)
    out = {}
    for name in cfes:
        worst, witness = float("inf"), None
        always = np.ones(prepared[name][0].shape[0], dtype=bool)
        for mask, res in zip(masks, outcomes):
            v = res[name]
            always &= v
            frac = float(v.mean()) if v.size else 1.0
            if frac < worst:
                worst, witness = frac, mask.removed
        out[name] = OracleResult(name, k, worst, witness, len(masks), always)
    return out


def estimate_delta(
    train: Dataset,
    X_val: np.ndarray,
    model,
    cache: InfluenceCache,
    k: int,
    n_sim: int,
    seed: int = 0,
    safety: float = 1.5,
    config=None,
    targeted: bool = False,
    details: dict | None = None,
) -> float:
    """Margin covering the first-order error on simulated deletions.

    For ``n_sim`` random size-``k`` deletions, retrain exactly and take the
    largest ``approx_score - retrained_score`` over the validation rows;
    clamp at zero and scale by ``safety``.

    ``targeted=True`` also retrains the worst-case deletion of every
    validation row (the mask the robust score itself selects), since those
    deletions remove the most influential rows and carry the largest
    higher-order error. ``details``, if given, receives the masks used and
    the unscaled maximum error.
    """
    if n_sim < 1:
        raise ValueError("n_sim must be at least 1")
    config = config or model.config
    X_val = np.atleast_2d(np.asarray(X_val, dtype=np.float64))
    spec = TrialSpec(alpha=0.5, M=n_sim, seed=seed)
    masks = []
    for m in range(n_sim):
        masks.append(_retrain_trial(train, config, k, spec, m))
    if targeted and k > 0:
        seen = {mk.removed for mk, _ in masks}
        for x in X_val:
            mk = worst_case_mask(cache, model, x, k)
            if mk.removed in seen:
                continue
            seen.add(mk.removed)
            try:
                masks.append((mk, retrain_exact(train, mk, config)))
            except DegenerateLabels:
                logger.warning("worst-case mask %s leaves one class; skipped", mk.removed)
    worst = 0.0
    for mask, retrained in masks:
        if model.family == "logreg":
            approx = augment(X_val, model.fit_intercept) @ approx_params(cache, mask)
        else:
            approx = np.array([approx_score(cache, model, mask, x) for x in X_val])
        worst = max(worst, float(np.max(approx - retrained.scores(X_val))))
    if details is not None:
        details.update(masks=[list(mk.removed) for mk, _ in masks], max_error=worst,
                       safety=safety, targeted=targeted)
    return max(worst, 0.0) * safety


@dataclass
class CostBoundReport:
    k: int
    n: int
    extra_cost: np.ndarray
    implied_constant: np.ndarray
    theta_norm: float

    @property
    def mean_extra(self) -> float:
        return float(np.mean(self.extra_cost)) if self.extra_cost.size else float("nan")

    @property
    def max_implied_constant(self) -> float:
        c = self.implied_constant[np.isfinite(self.implied_constant)]
        return float(np.max(c)) if c.size else float("nan")

    def summary(self) -> dict:
        c = self.implied_constant[np.isfinite(self.implied_constant)]
        return {
            "k": self.k, "n": self.n, "theta_norm": self.theta_norm,
            "mean_extra_cost": self.mean_extra,
            "max_extra_cost": float(np.max(self.extra_cost)) if self.extra_cost.size else None,
            "implied_C_mean": float(np.mean(c)) if c.size else None,
            "implied_C_max": float(np.max(c)) if c.size else None,
        }


def cost_bound_check(scfe_results, rocerf_results, model, k: int, n: int) -> CostBoundReport:
    """Extra cost of the robust counterfactual and the constant it implies.

    The extra cost is bounded by ``k C / (n |theta|)`` for logistic
    regression; this reports ``extra * n * |theta| / k`` per sample so the
    constant can be compared across training sizes and budgets.
    """
    if len(scfe_results) != len(rocerf_results):
        raise UnpairedResults(f"{len(scfe_results)} SCFE vs {len(rocerf_results)} ROCERF results")
    pairs = []
    for a, b in zip(scfe_results, rocerf_results):
        if not (isinstance(a, CfeResult) and isinstance(b, CfeResult)):
            continue
        if not np.array_equal(a.x0, b.x0):
            raise UnpairedResults("results are not paired on identical inputs")
        pairs.append(b.cost_l2 - a.cost_l2)
    extra = np.array(pairs, dtype=np.float64)
    norm = float(np.linalg.norm(model.weights if hasattr(model, "weights") else model.theta))
    if k > 0:
        implied = extra * n * norm / k
    else:
        implied = np.full(extra.shape, np.nan)
    return CostBoundReport(k, n, extra, implied, norm)


@dataclass
class SweepResult:
    k_values: list[int]
    alphas: list[float]
    grid: np.ndarray
    n_removed: list[int]
    pattern_holds: bool
    violations: list[tuple]


def k_sensitivity_sweep(
    train: Dataset,
    k_results: Mapping[int, Sequence],
    alphas: Sequence[float],
    config,
    M: int = 100,
    seed: int = 0,
    tolerance: float = 0.02,
    n_jobs: int = 1,
) -> SweepResult:
    """Validity grid over robustness budgets (rows) and deletion fractions (columns).

    ``k_results`` maps each budget ``k`` to its counterfactual results on the
    same samples. Also checks that, for each ``k``, validity at any alpha with
    ``ceil(alpha n) <= k`` is at least the validity at any alpha with
    ``ceil(alpha n) > k`` (minus ``tolerance``); violations are reported, not
    raised.
    """
    ks = list(k_results)
    cfes = {f"k={k}": res for k, res in k_results.items()}
    grid = np.zeros((len(ks), len(alphas)))
    sizes = []
    for j, a in enumerate(alphas):
        rep = run_removal_trials(train, TrialSpec(a, M, seed), cfes, config, n_jobs)
        sizes.append(removal_count(a, train.n))
        for i, k in enumerate(ks):
            grid[i, j] = rep.get(f"k={k}", a).validity_mean
    violations = []
    for i, k in enumerate(ks):
        covered = [j for j, s in enumerate(sizes) if s <= k]
        beyond = [j for j, s in enumerate(sizes) if s > k]
        for jc in covered:
            for jb in beyond:
                if grid[i, jc] < grid[i, jb] - tolerance:
                    violations.append((k, alphas[jc], alphas[jb]))
    for v in violations:
        logger.warning("k=%s: validity at alpha=%s below alpha=%s", *v)
    return SweepResult(ks, list(alphas), grid, sizes, not violations, violations)
