"""
Geometric Brownian motion on a fixed trading grid.

Random numbers come from counter-style substreams: the shocks for path ``i``
depend only on ``(seed, stream, i)``, never on how many paths were requested
alongside it. Paths are generated in fixed-size blocks, each block owning a
Philox generator keyed by ``SeedSequence(seed, spawn_key=(stream, block))``.
"""
import logging
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from src.exceptions import InvalidInputError
from src.schemas import MarketParams, TradingGrid
from src.services.messages_templates import NON_FINITE_INPUT, NON_POSITIVE_INPUT, NEGATIVE_TIME

logger = logging.getLogger(__name__)

BLOCK_SIZE = 256


class Stream(IntEnum):
    train = 0
    test = 1
    exploration = 2
    init = 3
    dropout = 4
    replay = 5
    background = 6


@dataclass(frozen=True)
class PathBatch:
    prices: np.ndarray
    shocks: np.ndarray
    seed: int
    stream: int = Stream.train

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.shocks.shape[1]


def _check_finite(**values) -> None:
    for name, value in values.items():
        if not np.all(np.isfinite(value)):
            raise InvalidInputError(NON_FINITE_INPUT.format(name=name, value=value))


def gbm_step(s, dt: float, dw, p: MarketParams):
    """
    The gbm_step function advances a stock price by one log-Euler step, which is exact for GBM.
        Works on scalars and on numpy arrays of prices/increments alike.

    :param s: Current price(s), strictly positive
    :param dt: float: Year fraction of the step
    :param dw: Brownian increment(s), already scaled by sqrt(dt)
    :param p: MarketParams: Drift and volatility
    :return: s * exp((mu - sigma^2 / 2) * dt + sigma * dw)
    """
    _check_finite(s=s, dt=dt, dw=dw)
    if np.any(np.asarray(s) <= 0):
        raise InvalidInputError(NON_POSITIVE_INPUT.format(name='s', value=s))
    if dt <= 0:
        raise InvalidInputError(NON_POSITIVE_INPUT.format(name='dt', value=dt))
    return s * np.exp((p.mu - 0.5 * p.sigma ** 2) * dt + p.sigma * dw)


def normal_shocks(n_paths: int, n_steps: int, seed: int, stream: int = Stream.train, start: int = 0) -> np.ndarray:
    """
    The normal_shocks function draws a (n_paths, n_steps) matrix of standard normals.
        Row i is path ``start + i`` of the substream: identical whatever n_paths it was requested with.

    :param n_paths: int: Number of rows
    :param n_steps: int: Number of columns
    :param seed: int: Root seed
    :param stream: int: Substream domain (train, test, ...)
    :param start: int: Index of the first path, used to draw fresh disjoint batches
    :return: A float64 matrix of independent N(0, 1) draws
    """
    if n_paths < 1:
        raise InvalidInputError(NON_POSITIVE_INPUT.format(name='n_paths', value=n_paths))
    if start < 0:
        raise InvalidInputError(NON_POSITIVE_INPUT.format(name='start', value=start))
    first, last = start // BLOCK_SIZE, (start + n_paths - 1) // BLOCK_SIZE
    blocks = []
    for block in range(first, last + 1):
        sequence = np.random.SeedSequence(entropy=seed, spawn_key=(int(stream), block))
        generator = np.random.Generator(np.random.Philox(sequence))
        blocks.append(generator.standard_normal((BLOCK_SIZE, n_steps)))
    offset = start - first * BLOCK_SIZE
    return np.concatenate(blocks, axis=0)[offset:offset + n_paths]


def paths_from_shocks(shocks: np.ndarray, grid: TradingGrid, p: MarketParams) -> np.ndarray:
    shocks = np.atleast_2d(np.asarray(shocks, dtype=float))
    prices = np.empty((shocks.shape[0], shocks.shape[1] + 1))
    prices[:, 0] = p.s0
    sqrt_dt = math.sqrt(grid.dt)
    for i in range(shocks.shape[1]):
        prices[:, i + 1] = gbm_step(prices[:, i], grid.dt, sqrt_dt * shocks[:, i], p)
    return prices


def simulate_paths(n_paths: int, grid: TradingGrid, p: MarketParams, seed: int,
                   stream: int = Stream.train) -> PathBatch:
    """
    The simulate_paths function generates a reproducible batch of GBM price paths on the trading grid.

    :param n_paths: int: Number of paths, at least one
    :param grid: TradingGrid: Step count and step size
    :param p: MarketParams: Simulated world
    :param seed: int: Reproducibility token
    :param stream: int: Substream domain, keeps training and test draws disjoint
    :return: An immutable PathBatch with prices and the shocks that produced them
    """
    shocks = normal_shocks(n_paths, grid.n_steps, seed, stream)
    prices = paths_from_shocks(shocks, grid, p)
    prices.flags.writeable = False
    shocks.flags.writeable = False
    logger.debug("simulated %d paths x %d steps (seed=%s, stream=%s)", n_paths, grid.n_steps, seed, stream)
    return PathBatch(prices=prices, shocks=shocks, seed=seed, stream=int(stream))


def discount_factor(rate: float, t):
    """
    The discount_factor function returns exp(-rate * t); equal to one when the rate is zero.

    :param rate: float: Annualized risk-free rate
    :param t: Non-negative time(s) in years
    :return: The discount factor(s)
    """
    if np.any(np.asarray(t) < 0):
        raise InvalidInputError(NEGATIVE_TIME.format(value=t))
    return np.exp(-rate * np.asarray(t, dtype=float)) if np.ndim(t) else math.exp(-rate * t)


def stream_rng(seed: int, stream: Stream) -> np.random.Generator:
    """Generator for the non-path draws of a run (initialization, dropout, exploration, replay)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(int(stream),)))
