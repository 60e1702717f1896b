import numpy as np
import pytest

from fdd import substrate as sb
from fdd.dae import DaeConfig, build_dae


@pytest.fixture
def f64():
    """Run a test with float64 parameters, restoring the previous default."""
    old = sb.get_default_dtype()
    sb.set_default_dtype(np.float64)
    yield
    sb.set_default_dtype(old)


@pytest.fixture
def tiny_config():
    return DaeConfig((16, 16, 1), (4, 8), 6, seed=3)


@pytest.fixture
def tiny_model(tiny_config):
    return build_dae(tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_images(rng, n, shape=(16, 16, 1)):
    return rng.uniform(-1, 1, size=(n, *shape))
