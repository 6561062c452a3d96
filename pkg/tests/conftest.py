import numpy as np
import pytest

from src.schemas import EnvConfig, MarketParams, MvhTrainConfig, OptionSpec, TradingGrid


def make_env(n_steps: int = 3, dt: float = 1 / 365, strike: float = 100.0, **overrides) -> EnvConfig:
    grid = TradingGrid(n_steps=n_steps, dt=dt)
    option = OptionSpec(strike=strike, maturity=grid.horizon)
    return EnvConfig(grid=grid, option=option, **overrides)


@pytest.fixture()
def table_one_env():
    return EnvConfig.table_one()


@pytest.fixture()
def zero_tc_env():
    return EnvConfig.table_one(alpha=0.0, beta=0.0)


@pytest.fixture()
def toy_env():
    return make_env(n_steps=3, alpha=0.01, beta=0.01, lambda_ra=0.1, gamma_discount=0.95)


@pytest.fixture()
def zero_vol_env():
    return make_env(n_steps=5, market=MarketParams(mu=0.0, sigma=0.0, rate=0.0), strike=90.0, alpha=0.0, beta=0.0)


@pytest.fixture()
def exact_mvh_config():
    return MvhTrainConfig(hidden=[4, 3], batch_norm=False, dropout=0.0, epochs=1, samples_per_epoch=8, minibatch=8)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
