import numpy as np
import pytest

from tailopt.market import KernelQuantile, MarketParams

REF_MARKET = MarketParams(mu=0.07, r=0.02, sigma=0.2, T=1.0, s0=0.0)


@pytest.fixture(scope="session")
def ref_market() -> MarketParams:
    return REF_MARKET


@pytest.fixture(scope="session")
def ref_kernel() -> KernelQuantile:
    return KernelQuantile.from_market(REF_MARKET)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
