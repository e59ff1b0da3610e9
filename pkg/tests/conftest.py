import numpy as np
import pytest
import torch

from aigc.adsac import oracle
from aigc.adsac.config import ClusterConfig
from aigc.adsac.env import EdgeEnv
from aigc.adsac.guard import guard


@pytest.fixture(scope="function")
def adsac_guard():
    # provide the fixture value
    yield guard
    # reset process-wide counters
    guard.reset_totals()


@pytest.fixture(autouse=True)
def _fresh_totals():
    guard.reset_totals()
    yield
    guard.reset_totals()


@pytest.fixture
def tiny_env():
    """Two servers, one model each, three scripted arrivals."""
    return oracle.tiny_env()


@pytest.fixture
def small_config():
    return ClusterConfig(
        n_servers=2,
        models_per_server=2,
        capacity_range=(400, 600),
        demand_range=(100, 250),
        lambda_=0.01,
        horizon=5000.0,
        duration_per_step=1.0,
        seed=3,
    )


@pytest.fixture
def small_env(small_config):
    return EdgeEnv(small_config)


@pytest.fixture
def default_env():
    return EdgeEnv(ClusterConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class MisSigned(torch.autograd.Function):
    """Identity forward, negated gradient."""

    @staticmethod
    def forward(ctx, x):
        return x.clone()

    @staticmethod
    def backward(ctx, grad):
        return -grad


@pytest.fixture
def mis_signed():
    return MisSigned.apply
