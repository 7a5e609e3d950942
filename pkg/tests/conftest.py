import numpy as np
import pytest

from vche.benchmark import benchmark_config, make_problem
from vche.grids import Grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid8():
    return Grid((8, 8, 8))


@pytest.fixture(scope="session")
def bench_cfg():
    return benchmark_config()


@pytest.fixture(scope="session")
def bench_problem(bench_cfg):
    return make_problem(bench_cfg, target_amplitude=0.006)
