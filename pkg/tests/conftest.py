import numpy as np
import pytest

from flatmpc.harness import suite
from flatmpc.harness.config import ExperimentConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def e1_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def e1_model(e1_config):
    """GP trained on the default sine-ramp experiment, seed 0."""
    return suite.train_model(e1_config, 0)[0]
