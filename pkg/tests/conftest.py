import numpy as np
import pytest

from xsub.core import AttackConfig
from xsub.data import synth_gaussians, train_test_split
from xsub.explainer import Explainer, ExplainerConfig
from xsub.model import TrainConfig, train

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_world():
    """A quick 4x4x1, 3-class synthetic task with a trained model and explainer."""
    ds = synth_gaussians(60, 16, 3, 4.0, seed=11, shape=(4, 4, 1))
    train_set, test_set = train_test_split(ds)
    model = train(train_set, TrainConfig(lr=0.1, epochs=15, seed=11, hidden=(16,)))
    g = Explainer.from_dataset(model, train_set, ExplainerConfig(n_coalitions=128,
                                                                 background_size=8, seed=11))
    return train_set, test_set, model, g


@pytest.fixture
def attack_cfg():
    return AttackConfig(alpha=1.0, beta=1.0, k=1, golden_set_size=4, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
