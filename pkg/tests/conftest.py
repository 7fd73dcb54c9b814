from pathlib import Path

import numpy as np
import pytest

from rocerf import build_hessian_factor, build_influence_cache, make_synthetic_gaussians, train_logreg

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def lr_fixture(seed=0, n_per_class=20, d=2, separation=3.0, gamma=0.1):
    train = make_synthetic_gaussians(n_per_class, d, separation, seed)
    model = train_logreg(train, gamma=gamma)
    cache = build_influence_cache(model, train, build_hessian_factor(model, train))
    return train, model, cache


def fresh_negatives(model, d=2, separation=3.0, seed=1000, count=20):
    pool = make_synthetic_gaussians(200, d, separation, seed).features
    return pool[model.scores(pool) < 0][:count]


@pytest.fixture(scope="session")
def small_lr():
    return lr_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
