import math

import numpy as np
import pytest

from src.exceptions import InvalidInputError
from src.schemas import MarketParams, TradingGrid
from src.services.market_sim import (BLOCK_SIZE, Stream, discount_factor, gbm_step, normal_shocks, paths_from_shocks,
                                     simulate_paths, stream_rng)


@pytest.fixture()
def market():
    return MarketParams(mu=0.05, sigma=0.2)


@pytest.fixture()
def grid():
    return TradingGrid(n_steps=30, dt=1 / 365)


def test_gbm_step_zero_shock(market):
    assert gbm_step(100.0, 1 / 365, 0.0, market) == pytest.approx(100 * math.exp(0.03 / 365), rel=1e-15)


def test_gbm_step_zero_volatility():
    flat = MarketParams(mu=0.05, sigma=0.0)
    assert gbm_step(100.0, 0.5, 3.7, flat) == pytest.approx(100 * math.exp(0.05 * 0.5), rel=1e-15)


def test_gbm_step_closed_form(market):
    expected = 100 * math.exp((0.05 - 0.02) / 365 + 0.2 * 0.01)
    assert gbm_step(100.0, 1 / 365, 0.01, market) == pytest.approx(expected, rel=1e-14)


def test_gbm_step_vectorized(market):
    s = np.array([90.0, 100.0, 110.0])
    dw = np.array([-0.01, 0.0, 0.02])
    result = gbm_step(s, 1 / 365, dw, market)
    assert result.shape == (3,)
    assert np.all(result > 0)
    assert result[1] == pytest.approx(gbm_step(100.0, 1 / 365, 0.0, market))


@pytest.mark.parametrize('s, dt, dw', [(math.nan, 1 / 365, 0.0), (100.0, math.inf, 0.0), (100.0, 1 / 365, math.nan),
                                       (-1.0, 1 / 365, 0.0), (100.0, 0.0, 0.0)])
def test_gbm_step_invalid_input(market, s, dt, dw):
    with pytest.raises(InvalidInputError):
        gbm_step(s, dt, dw, market)


def test_normal_shocks_prefix_stable():
    small = normal_shocks(10, 5, seed=7)
    large = normal_shocks(BLOCK_SIZE + 50, 5, seed=7)
    np.testing.assert_array_equal(small, large[:10])


def test_normal_shocks_start_offset():
    full = normal_shocks(2 * BLOCK_SIZE, 4, seed=3)
    window = normal_shocks(100, 4, seed=3, start=BLOCK_SIZE - 20)
    np.testing.assert_array_equal(window, full[BLOCK_SIZE - 20:BLOCK_SIZE + 80])


def test_normal_shocks_streams_differ():
    train = normal_shocks(5, 3, seed=11, stream=Stream.train)
    test = normal_shocks(5, 3, seed=11, stream=Stream.test)
    assert not np.allclose(train, test)


@pytest.mark.parametrize('n_paths, start', [(0, 0), (5, -1)])
def test_normal_shocks_invalid(n_paths, start):
    with pytest.raises(InvalidInputError):
        normal_shocks(n_paths, 3, seed=0, start=start)


def test_simulate_paths_deterministic(market, grid):
    first = simulate_paths(20, grid, market, seed=42)
    second = simulate_paths(20, grid, market, seed=42)
    assert first.prices.tobytes() == second.prices.tobytes()
    assert first.shocks.tobytes() == second.shocks.tobytes()


def test_simulate_paths_shape_and_start(market, grid):
    batch = simulate_paths(4, grid, market, seed=1)
    assert batch.prices.shape == (4, 31)
    assert batch.n_paths == 4
    assert batch.n_steps == 30
    assert np.all(batch.prices[:, 0] == market.s0)
    assert np.all(batch.prices > 0)


def test_simulate_paths_read_only(market, grid):
    batch = simulate_paths(3, grid, market, seed=1)
    with pytest.raises(ValueError):
        batch.prices[0, 0] = 1.0


def test_simulate_paths_log_euler_exact(market, grid):
    batch = simulate_paths(50, grid, market, seed=5)
    for i in range(grid.n_steps):
        stepped = gbm_step(batch.prices[:, i], grid.dt, math.sqrt(grid.dt) * batch.shocks[:, i], market)
        np.testing.assert_allclose(batch.prices[:, i + 1], stepped, rtol=1e-12)


def test_simulate_paths_row_independent_of_batch(market, grid):
    small = simulate_paths(3, grid, market, seed=9)
    large = simulate_paths(600, grid, market, seed=9)
    np.testing.assert_array_equal(small.prices, large.prices[:3])


def test_zero_volatility_path_is_deterministic(grid):
    flat = MarketParams(mu=0.05, sigma=0.0)
    batch = simulate_paths(1, grid, flat, seed=0)
    np.testing.assert_allclose(batch.prices[0], 100 * np.exp(0.05 * grid.times), rtol=1e-12)


def test_paths_from_shocks_accepts_single_row(market, grid):
    prices = paths_from_shocks(np.zeros(grid.n_steps), grid, market)
    assert prices.shape == (1, 31)
    assert prices[0, -1] == pytest.approx(100 * math.exp(0.03 * grid.horizon))


def test_terminal_log_return_moments(market, grid):
    batch = simulate_paths(100_000, grid, market, seed=2024, stream=Stream.test)
    log_return = np.log(batch.prices[:, -1] / batch.prices[:, 0])
    n = log_return.size
    horizon = grid.horizon
    variance = market.sigma ** 2 * horizon
    mean_se = math.sqrt(variance / n)
    var_se = variance * math.sqrt(2 / (n - 1))
    assert abs(log_return.mean() - (market.mu - market.sigma ** 2 / 2) * horizon) < 3 * mean_se
    assert abs(log_return.var(ddof=1) - variance) < 3 * var_se


@pytest.mark.parametrize('rate, t, expected', [(0.0, 12.3, 1.0), (0.05, 1.0, math.exp(-0.05)),
                                               (0.05, 30 / 365, math.exp(-0.05 * 30 / 365))])
def test_discount_factor(rate, t, expected):
    assert discount_factor(rate, t) == pytest.approx(expected, rel=1e-15)


def test_discount_factor_array():
    times = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(discount_factor(0.1, times), np.exp(-0.1 * times))


def test_discount_factor_negative_time():
    with pytest.raises(InvalidInputError):
        discount_factor(0.05, -0.1)


def test_stream_rng_reproducible():
    assert stream_rng(5, Stream.init).random() == stream_rng(5, Stream.init).random()
    assert stream_rng(5, Stream.init).random() != stream_rng(5, Stream.dropout).random()
