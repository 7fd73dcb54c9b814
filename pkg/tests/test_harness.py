import numpy as np
import pytest

from rocerf.errors import CombinatoricsTooLarge, NotNegativeSample, UnpairedResults
from rocerf.harness import (
    EvalReport,
    TrialSpec,
    cost_bound_check,
    counterfactual_matrix,
    estimate_delta,
    evaluate_alphas,
    exhaustive_validity_oracle,
    k_sensitivity_sweep,
    removal_count,
    run_removal_trials,
    sample_mask,
    validity,
)
from rocerf.influence import InfluenceCache
from rocerf.recourse import RocerfConfig, batch_explain

from .conftest import fresh_negatives, lr_fixture


@pytest.fixture(scope="module")
def world():
    train, model, cache = lr_fixture()
    neg = fresh_negatives(model, count=10)
    scfe_res = batch_explain(model, cache, neg, "scfe", RocerfConfig())
    rob_res = batch_explain(model, cache, neg, "rocerf", RocerfConfig(k=2, delta=0.1))
    return train, model, cache, neg, scfe_res, rob_res


def test_removal_count():
    assert removal_count(0.001, 100) == 1
    assert removal_count(0.01, 700) == 7
    assert removal_count(0.05, 40) == 2
    assert removal_count(0.051, 40) == 3


def test_sample_mask_depends_only_on_seed_and_trial():
    a = sample_mask(50, 5, 1, 3)
    assert a == sample_mask(50, 5, 1, 3)
    assert a != sample_mask(50, 5, 1, 4)
    assert a.k == 5


def test_trial_spec_validation():
    with pytest.raises(ValueError):
        TrialSpec(alpha=0.0)
    with pytest.raises(ValueError):
        TrialSpec(alpha=0.1, M=0)


def test_counterfactual_matrix_marks_failures(world):
    _, model, _, _, scfe_res, _ = world
    X, ok = counterfactual_matrix([scfe_res[0], NotNegativeSample("x"), scfe_res[1]])
    assert ok.tolist() == [True, False, True]
    assert np.isnan(X[1]).all()
    assert validity(model, X, ok)[1] == np.False_


def test_report_is_recomputable_from_series(world):
    train, model, _, _, scfe_res, rob_res = world
    rep = run_removal_trials(train, TrialSpec(0.05, M=8, seed=2),
                             {"scfe": scfe_res, "rocerf": rob_res}, model.config)
    for name in ("scfe", "rocerf"):
        e = rep.get(name, 0.05)
        assert e.n_removed == 2 and len(e.series) == 8
        assert e.validity_mean == pytest.approx(np.mean(e.series))
        assert e.validity_se == pytest.approx(np.std(e.series, ddof=1) / np.sqrt(8))
        assert e.cost_l2_mean == pytest.approx(np.mean([r.cost_l2 for r in
                                                        (scfe_res if name == "scfe" else rob_res)]))
    assert len(rep.provenance["masks"]) == 8


def test_seed_isolation(world):
    train, model, _, _, scfe_res, rob_res = world
    a = run_removal_trials(train, TrialSpec(0.05, M=5, seed=1), {"s": scfe_res}, model.config)
    b = run_removal_trials(train, TrialSpec(0.05, M=5, seed=1),
                           {"s": scfe_res, "r": rob_res}, model.config, n_jobs=2)
    assert a.get("s", 0.05).series == b.get("s", 0.05).series


def test_far_counterfactuals_survive_every_deletion(world):
    train, model, _, neg, _, _ = world
    far = neg + 20.0 * model.weights / np.linalg.norm(model.weights)
    out = exhaustive_validity_oracle(train, 1, {"far": far}, model.config)
    assert out["far"].worst_validity == 1.0
    assert out["far"].per_sample_always_valid.all()


def test_empty_method_reports_nan(world):
    train, model, _, _, _, _ = world
    rep = run_removal_trials(train, TrialSpec(0.05, M=2), {"none": []}, model.config)
    e = rep.get("none", 0.05)
    assert e.n_samples == 0 and np.isnan(e.cost_l2_mean)


def test_evaluate_alphas_csv(world):
    train, model, _, _, scfe_res, rob_res = world
    rep = evaluate_alphas(train, [0.025, 0.05], {"scfe": scfe_res, "rocerf": rob_res},
                          model.config, M=3)
    lines = rep.to_csv().strip().split("\n")
    assert lines[0].startswith("method,alpha,validity_mean,validity_se")
    assert len(lines) == 5
    assert isinstance(rep.to_dict()["entries"], list)
    assert isinstance(EvalReport().extend(rep), EvalReport)


def test_oracle_enumerates_every_pair(world):
    train, model, _, _, scfe_res, rob_res = world
    out = exhaustive_validity_oracle(train, 2, {"scfe": scfe_res, "rocerf": rob_res},
                                     model.config, n_jobs=4)
    assert out["rocerf"].n_models == 780
    # the exhaustive worst case can never beat the random-trial average
    rep = run_removal_trials(train, TrialSpec(0.05, M=10), {"rocerf": rob_res}, model.config)
    assert out["rocerf"].worst_validity <= rep.get("rocerf", 0.05).validity_mean + 1e-12
    assert out["rocerf"].per_sample_always_valid.shape == (len(rob_res),)


def test_oracle_k_zero_is_the_trained_model(world):
    train, model, _, _, scfe_res, _ = world
    out = exhaustive_validity_oracle(train, 0, {"scfe": scfe_res}, model.config)
    assert out["scfe"].n_models == 1
    assert out["scfe"].worst_validity == 1.0


def test_oracle_cap(world):
    train, model, _, _, scfe_res, _ = world
    with pytest.raises(CombinatoricsTooLarge):
        exhaustive_validity_oracle(train, 3, {"scfe": scfe_res}, model.config, cap=1000)


def test_estimate_delta_small_for_single_removal():
    train, model, cache = lr_fixture(0, n_per_class=50)
    X_val = fresh_negatives(model, count=50)
    details = {}
    delta = estimate_delta(train, X_val, model, cache, 1, 20, details=details)
    assert 0.0 <= delta <= 0.05
    assert len(details["masks"]) == 20
    assert delta == pytest.approx(max(details["max_error"], 0.0) * 1.5)


def test_estimate_delta_zero_when_approximation_is_exact(world):
    train, model, _, neg, _, _ = world
    # empty deletions: retraining reproduces the trained model, so the error is zero
    cache = InfluenceCache(np.zeros((train.n, 3)), model.theta)
    d = estimate_delta(train, neg, model, cache, 0, 3)
    assert d == 0.0


def test_cost_bound(world):
    train, model, _, _, scfe_res, rob_res = world
    rep = cost_bound_check(scfe_res, rob_res, model, 2, train.n)
    assert np.all(rep.extra_cost >= -1e-6)
    assert np.allclose(rep.implied_constant,
                       rep.extra_cost * train.n * np.linalg.norm(model.weights) / 2)
    same = cost_bound_check(scfe_res, scfe_res, model, 0, train.n)
    assert np.all(same.extra_cost == 0.0)
    assert np.isnan(same.max_implied_constant)
    with pytest.raises(UnpairedResults):
        cost_bound_check(scfe_res, rob_res[:-1], model, 2, train.n)
    with pytest.raises(UnpairedResults):
        cost_bound_check(scfe_res[:2], rob_res[1:3], model, 2, train.n)


def test_sweep_grid(world):
    train, model, cache, neg, scfe_res, rob_res = world
    sw = k_sensitivity_sweep(train, {0: scfe_res, 2: rob_res}, [0.025, 0.05], model.config, M=4)
    assert sw.grid.shape == (2, 2)
    assert sw.n_removed == [1, 2]
    one = k_sensitivity_sweep(train, {2: rob_res}, [0.05], model.config, M=4, seed=7)
    rep = run_removal_trials(train, TrialSpec(0.05, M=4, seed=7), {"x": rob_res}, model.config)
    assert one.grid[0, 0] == rep.get("x", 0.05).validity_mean
