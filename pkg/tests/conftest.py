import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MNIST_DIR = os.environ.get("XBAR_MNIST_DIR", "/root/data/mnist")


def mnist_available():
    return os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
