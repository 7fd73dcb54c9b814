import json

import numpy as np
import pytest

from rocerf.data import make_synthetic_gaussians
from rocerf.errors import DegenerateLabels, NotNegativeSample
from rocerf.models import LinearClassifier, LogRegConfig, MlpConfig, train_logreg, train_mlp
from rocerf.recourse import CfeResult, RocerfConfig, scfe
from rocerf.surrogate import (
    SurrogateConfig,
    batch_via_surrogate,
    fit_local_surrogate,
    rocerf_via_surrogate,
    surrogate_influence_cache,
)


@pytest.fixture(scope="module")
def linear_world():
    train = make_synthetic_gaussians(50, 2, 3.0, 0)
    model = train_logreg(train)
    pool = make_synthetic_gaussians(200, 2, 3.0, 1000).features
    s = model.scores(pool)
    return train, model, pool[(s < 0) & (s > -1.5)][:5]


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_linear_blackbox_direction_recovered(linear_world):
    _, model, neg = linear_world
    for x0 in neg:
        sur = fit_local_surrogate(model, x0, 2000, 0.5, seed=0, noise_is_variance=False)
        assert abs(_cos(sur.model.weights, model.weights)) >= 0.99
        assert 0.0 <= sur.fit_accuracy <= 1.0


def test_single_class_region_raises():
    model = LinearClassifier(np.array([1.0, 0.0]), 0.1, False, LogRegConfig(0.1, fit_intercept=False))
    with pytest.raises(DegenerateLabels) as err:
        fit_local_surrogate(model, np.array([-50.0, 0.0]), 500, 0.1)
    assert err.value.present_class == -1


def test_noise_interpretation():
    assert SurrogateConfig(noise=0.1).sigma == pytest.approx(0.1 ** 0.5)
    assert SurrogateConfig(noise=0.1, noise_is_variance=False).sigma == 0.1


def test_surrogate_is_deterministic_given_seed(linear_world):
    _, model, neg = linear_world
    a = fit_local_surrogate(model, neg[0], 1000, 0.1, seed=3)
    b = fit_local_surrogate(model, neg[0], 1000, 0.1, seed=3)
    c = fit_local_surrogate(model, neg[0], 1000, 0.1, seed=4)
    assert np.array_equal(a.theta_local, b.theta_local)
    assert not np.array_equal(a.theta_local, c.theta_local)


def test_influence_cache_shape(linear_world):
    train, model, neg = linear_world
    sur = fit_local_surrogate(model, neg[0], 1000, 0.1)
    cache = surrogate_influence_cache(sur, train)
    assert (cache.n, cache.p) == (train.n, 3)
    assert np.array_equal(cache.theta_hat, sur.theta_local)


def test_k_zero_valid_on_blackbox_when_fit_is_exact(linear_world):
    train, model, neg = linear_world
    scfg = SurrogateConfig(n_perturb=2000)
    for x0 in neg:
        res = rocerf_via_surrogate(model, train, x0, RocerfConfig(k=0), scfg)
        assert res.method == "scfe-surrogate"
        if res.info["fit_accuracy"] == 1.0:
            assert model.score(res.x_cf) >= 0.0
        # a near-exact linear surrogate puts the counterfactual close to the true boundary
        assert res.cost_l2 == pytest.approx(scfe(model, x0).cost_l2, rel=0.25, abs=0.02)


def test_robust_surrogate_costs_at_least_plain(linear_world):
    train, model, neg = linear_world
    scfg = SurrogateConfig(n_perturb=2000)
    for x0 in neg:
        plain = rocerf_via_surrogate(model, train, x0, RocerfConfig(k=0), scfg)
        robust = rocerf_via_surrogate(model, train, x0, RocerfConfig(k=3), scfg)
        assert robust.method == "rocerf-surrogate"
        assert robust.cost_l2 >= plain.cost_l2 - 1e-6


def test_provenance_in_json(linear_world):
    train, model, neg = linear_world
    res = rocerf_via_surrogate(model, train, neg[0], RocerfConfig(k=1), SurrogateConfig(n_perturb=500))
    doc = json.loads(json.dumps(res.to_dict(), default=str))
    assert doc["info"]["surrogate"]["n_perturb"] == 500
    assert doc["info"]["surrogate"]["sigma"] == pytest.approx(0.1 ** 0.5)
    assert "fit_accuracy" in doc["info"]


def test_positive_query_rejected(linear_world):
    train, model, _ = linear_world
    x = 5.0 * np.sign(model.weights)
    with pytest.raises(NotNegativeSample):
        rocerf_via_surrogate(model, train, x, RocerfConfig(k=1))


def test_deep_negative_widens_noise(linear_world):
    train, model, _ = linear_world
    x0 = -4.0 * model.weights / np.linalg.norm(model.weights)
    res = rocerf_via_surrogate(model, train, x0, RocerfConfig(k=1), SurrogateConfig(n_perturb=500))
    assert res.info["sigma_used"] > SurrogateConfig().sigma


def test_batch_order_failures_and_threads(linear_world):
    train, model, neg = linear_world
    batch = [neg[0], 5.0 * np.sign(model.weights), neg[1]]
    scfg = SurrogateConfig(n_perturb=500)
    seq = batch_via_surrogate(model, train, batch, RocerfConfig(k=1), scfg)
    par = batch_via_surrogate(model, train, batch, RocerfConfig(k=1), scfg, n_jobs=3)
    assert isinstance(seq[1], NotNegativeSample) and isinstance(par[1], NotNegativeSample)
    for a, b in ((seq[0], par[0]), (seq[2], par[2])):
        assert isinstance(a, CfeResult) and np.array_equal(a.x_cf, b.x_cf)


def test_mlp_blackbox_surrogate_fidelity():
    train = make_synthetic_gaussians(100, 3, 2.0, 0)
    net = train_mlp(train, MlpConfig(epochs=60))
    neg = train.features[net.scores(train.features) < 0][:3]
    for x0 in neg:
        res = rocerf_via_surrogate(net, train, x0, RocerfConfig(k=2), SurrogateConfig(n_perturb=2000))
        assert res.info["fit_accuracy"] >= 0.8
        assert res.info["low_fidelity"] is False
