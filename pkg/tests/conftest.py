import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gala import Dataset, ModelState, UNLABELED  # noqa: E402


def random_model(rng, d, C, hidden=0, scale=1.0):
    if hidden:
        return ModelState(rng.normal(0, scale, (hidden, C)), rng.normal(0, 0.1, C),
                          rng.normal(0, scale, (d, hidden)), rng.normal(0, 0.1, hidden))
    return ModelState(rng.normal(0, scale, (d, C)), rng.normal(0, 0.1, C))


def random_dataset(rng, n_target, n_source_per_domain, K, C, d):
    n_src = n_source_per_domain * K
    X = rng.normal(size=(n_src + n_target, d))
    dom = np.concatenate([np.repeat(np.arange(K), n_source_per_domain), np.full(n_target, K)])
    X[:n_src] += dom[:n_src, None] * 0.5
    y = np.concatenate([rng.integers(0, C, n_src), np.full(n_target, UNLABELED)])
    return Dataset(X, y, dom, C, K)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds(rng):
    return random_dataset(rng, n_target=40, n_source_per_domain=20, K=2, C=3, d=5)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
