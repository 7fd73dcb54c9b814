import numpy as np
import pytest

from rocerf.errors import Infeasible, KTooLarge, NotNegativeSample
from rocerf.influence import InfluenceCache, robust_score
from rocerf.models import LinearClassifier, LogRegConfig
from rocerf.recourse import (
    CSV_COLUMNS,
    CfeResult,
    RocerfConfig,
    ScoreConstraint,
    batch_explain,
    inner_minimize,
    penalty,
    results_to_csv,
    rocerf,
    scfe,
)

from .conftest import fresh_negatives


def _lin(theta):
    return LinearClassifier(np.asarray(theta, float), 0.1, False, LogRegConfig(0.1, fit_intercept=False))


def _zero_cache(n, p):
    return InfluenceCache(np.zeros((n, p)), np.zeros(p))


def test_penalty_values():
    assert penalty(-1.0) == 0.0
    assert penalty(0.0) == 0.0
    assert penalty(2.0) == 4.0


def test_scfe_axis_aligned_example():
    res = scfe(_lin([1.0, 0.0]), np.array([-2.0, 0.0]))
    assert res.feasible
    np.testing.assert_allclose(res.x_cf, [0.0, 0.0], atol=1e-4)
    assert res.cost_l2 == pytest.approx(2.0, rel=1e-4)


def test_scfe_oblique_example():
    theta = np.array([3.0, 4.0]) / 5.0
    x0 = np.array([-1.0, -1.0])
    res = scfe(_lin(theta), x0)
    # projection onto the hyperplane theta . x = 0
    expected = x0 - (theta @ x0) * theta
    np.testing.assert_allclose(res.x_cf, expected, atol=1e-4)
    assert res.constraint_value >= 0.0


def test_zero_multiplier_keeps_x0():
    x0 = np.array([-2.0, 0.5])
    x, _ = inner_minimize(ScoreConstraint(_lin([1.0, 0.0])), x0, 0.0, 1e-6, RocerfConfig())
    np.testing.assert_array_equal(x, x0)


def test_large_multiplier_reaches_shifted_hyperplane():
    model = _lin([1.0, 0.0])
    x0 = np.array([-2.0, 0.0])
    x, _ = inner_minimize(ScoreConstraint(model), x0, 1e6, 0.5, RocerfConfig(max_steps=5000))
    np.testing.assert_allclose(x, [0.5, 0.0], atol=1e-3)


def test_positive_sample_rejected(small_lr):
    _, model, cache = small_lr
    x = np.array([5.0, 5.0]) * np.sign(model.weights)
    assert model.score(x) > 0
    with pytest.raises(NotNegativeSample):
        scfe(model, x)
    with pytest.raises(NotNegativeSample):
        rocerf(model, cache, x, RocerfConfig(k=1))


def test_k_zero_is_bitwise_scfe(small_lr):
    _, model, cache = small_lr
    for x0 in fresh_negatives(model, count=10):
        a = scfe(model, x0)
        b = rocerf(model, cache, x0, RocerfConfig(k=0))
        assert np.array_equal(a.x_cf, b.x_cf)


def test_zero_influence_reduces_to_scfe():
    model = _lin([1.0, 0.0])
    cache = _zero_cache(10, 2)
    x0 = np.array([-2.0, 1.0])
    a = scfe(model, x0)
    b = rocerf(model, cache, x0, RocerfConfig(k=3))
    np.testing.assert_allclose(a.x_cf, b.x_cf, atol=1e-12)


def test_k_larger_than_training_set(small_lr):
    _, model, cache = small_lr
    with pytest.raises(KTooLarge):
        rocerf(model, cache, fresh_negatives(model, count=1)[0], RocerfConfig(k=cache.n + 1))
    with pytest.raises(KTooLarge):
        RocerfConfig(k=-1)


def test_rocerf_meets_robust_threshold_and_costs_more(small_lr):
    _, model, cache = small_lr
    cfg = RocerfConfig(k=2, delta=0.05)
    for x0 in fresh_negatives(model, count=10):
        r = rocerf(model, cache, x0, cfg)
        s = scfe(model, x0)
        assert r.feasible
        # the reported constraint value is re-evaluated at the returned point
        assert r.constraint_value == pytest.approx(robust_score(cache, model, r.x_cf, 2), abs=1e-12)
        assert r.constraint_value >= cfg.delta
        assert model.score(r.x_cf) >= cfg.delta
        assert r.cost_l2 >= s.cost_l2 - 1e-6


def test_bisection_bracket_shrinks(small_lr):
    _, model, cache = small_lr
    x0 = fresh_negatives(model, count=1)[0]
    res = rocerf(model, cache, x0, RocerfConfig(k=2, T=15))
    brackets = [(lo, hi) for tag, lo, hi, _ in res.trace if tag == "bisect"]
    assert len(brackets) == 15
    widths = [hi - lo for lo, hi in brackets]
    assert all(b < a for a, b in zip(widths, widths[1:]))
    for (lo, hi), (lo2, hi2) in zip(brackets, brackets[1:]):
        assert lo <= lo2 and hi2 <= hi


def test_infeasible_with_tiny_doubling_cap(small_lr):
    _, model, cache = small_lr
    x0 = fresh_negatives(model, count=1)[0]
    cfg = RocerfConfig(k=2, delta=5.0, lambda_init=1e-6, doubling_cap=1, max_steps=20)
    res = rocerf(model, cache, x0, cfg)
    assert not res.feasible
    with pytest.raises(Infeasible):
        rocerf(model, cache, x0, cfg, raise_on_infeasible=True)


def test_box_constraints_respected(small_lr):
    _, model, cache = small_lr
    x0 = fresh_negatives(model, count=1)[0]
    lower = tuple(x0 - 10.0)
    upper = tuple(x0 + 10.0)
    res = rocerf(model, cache, x0, RocerfConfig(k=1, lower=lower, upper=upper))
    assert np.all(res.x_cf >= np.array(lower)) and np.all(res.x_cf <= np.array(upper))


def test_batch_keeps_order_and_failure_slots(small_lr):
    _, model, cache = small_lr
    neg = list(fresh_negatives(model, count=3))
    pos = np.array([5.0, 5.0]) * np.sign(model.weights)
    batch = neg[:1] + [pos] + neg[1:]
    out = batch_explain(model, cache, batch, "rocerf", RocerfConfig(k=1))
    assert isinstance(out[1], NotNegativeSample)
    assert all(isinstance(r, CfeResult) for i, r in enumerate(out) if i != 1)
    assert np.array_equal(out[0].x0, batch[0])
    assert batch_explain(model, cache, [], "scfe", RocerfConfig()) == []
    threaded = batch_explain(model, cache, batch, "rocerf", RocerfConfig(k=1), n_jobs=2)
    assert np.array_equal(threaded[2].x_cf, out[2].x_cf)


def test_results_csv_layout(small_lr):
    _, model, cache = small_lr
    x0 = fresh_negatives(model, count=1)[0]
    res = scfe(model, x0)
    text = results_to_csv([(0, "scfe", res), (1, "scfe", NotNegativeSample("positive"))])
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1].startswith("0,scfe,true,")
    assert lines[2] == "1,scfe,false,,,,0"


def test_result_to_dict_is_serialisable(small_lr):
    import json

    _, model, _ = small_lr
    res = scfe(model, fresh_negatives(model, count=1)[0])
    d = json.loads(json.dumps(res.to_dict(), default=str))
    assert d["method"] == "scfe" and len(d["x_cf"]) == 2
