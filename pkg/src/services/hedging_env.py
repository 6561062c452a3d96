"""
Hedged-portfolio environment.

Values are discounted back to time zero: with ``D_i = exp(-r t_i)`` the
step P&L is

    pnl_i = H^O m (D_{i+1} C_{i+1} - D_i C_i) + H_i (D_{i+1} S_{i+1} - D_i S_i) - D_i tc_i

where ``H_i`` is the holding chosen at ``t_i`` and ``tc_i`` is charged on the
trade ``H_i - H_{i-1}`` (``H_{-1} = 0``). Transaction costs are non-negative
and reduce wealth. At maturity the call is marked at its payoff and, when
``settle_unwind`` is on, the residual stock is liquidated with one more
transaction cost folded into the last step.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Protocol

import numpy as np

from src.exceptions import InvalidInputError, UsageError
from src.schemas import EnvConfig, HedgeState, StepOutcome
from src.services.bs_pricing import bs_call_delta, bs_call_price
from src.services.market_sim import PathBatch, Stream, discount_factor, gbm_step, simulate_paths
from src.services.messages_templates import HOLDING_OUT_OF_BOUNDS, POLICY_NON_FINITE, TERMINAL_STEP

logger = logging.getLogger(__name__)

BOUNDS_TOLERANCE = 1e-9


class BatchPolicy(Protocol):
    def holdings(self, step: int, raw: np.ndarray) -> np.ndarray:
        ...


def transaction_cost(s, d_h, alpha: float, beta: float):
    return alpha * s * (np.abs(d_h) + beta * np.square(d_h))


def transaction_cost_grad(s, d_h, alpha: float, beta: float):
    """Derivative of transaction_cost in d_h; sign(0) = 0 picks the zero subgradient."""
    return alpha * s * (np.sign(d_h) + 2.0 * beta * d_h)


def stepwise_cost(pnl, lambda_ra: float):
    return -pnl + 0.5 * lambda_ra * np.square(pnl)


def normalize_features(config: EnvConfig, raw: np.ndarray) -> np.ndarray:
    """
    The normalize_features function scales raw (time, stock, option price, delta, holding) rows
    to the network input contract and drops the columns the config excludes.

    :param config: EnvConfig: Supplies horizon, spot and contract size
    :param raw: np.ndarray: (n, 5) raw feature rows
    :return: (n, p) normalized feature rows
    """
    raw = np.atleast_2d(raw)
    scale = np.array([config.grid.horizon, config.market.s0, config.market.s0, 1.0, config.contract_multiplier])
    return (raw / scale)[:, config.feature_columns]


@dataclass(frozen=True)
class MarketTensor:
    times: np.ndarray
    discount: np.ndarray
    stock: np.ndarray
    option_price: np.ndarray
    delta: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.stock.shape[0]

    @property
    def n_steps(self) -> int:
        return self.stock.shape[1] - 1

    def subset(self, index) -> 'MarketTensor':
        return MarketTensor(times=self.times, discount=self.discount, stock=self.stock[index],
                            option_price=self.option_price[index], delta=self.delta[index])

    def raw_features(self, step: int, holdings_prev: np.ndarray) -> np.ndarray:
        n = self.n_paths
        return np.column_stack([
            np.full(n, self.times[step]), self.stock[:, step], self.option_price[:, step],
            self.delta[:, step], np.broadcast_to(holdings_prev, (n,)),
        ])


@dataclass(frozen=True)
class Ledger:
    pnl: np.ndarray
    tc: np.ndarray
    unwind_tc: np.ndarray
    cost: np.ndarray

    @property
    def total_hedge_cost(self) -> np.ndarray:
        return -self.pnl.sum(axis=1)


@dataclass(frozen=True)
class BatchRecord:
    market: MarketTensor
    holdings: np.ndarray
    ledger: Ledger

    @property
    def total_hedge_cost(self) -> np.ndarray:
        return self.ledger.total_hedge_cost

    @property
    def total_tc(self) -> np.ndarray:
        disc = self.market.discount
        return (self.ledger.tc * disc[:-1]).sum(axis=1) + disc[-1] * self.ledger.unwind_tc


@dataclass
class EpisodeRecord:
    states: List[HedgeState]
    actions: List[float]
    outcomes: List[StepOutcome]

    @property
    def pnls(self) -> np.ndarray:
        return np.array([outcome.pnl for outcome in self.outcomes])

    @property
    def costs(self) -> np.ndarray:
        return np.array([outcome.cost for outcome in self.outcomes])

    @property
    def total_hedge_cost(self) -> float:
        return -float(self.pnls.sum())


def time_to_maturity(config: EnvConfig, step) -> np.ndarray:
    return (config.grid.n_steps - np.asarray(step)) * config.grid.dt


def market_tensor(config: EnvConfig, prices: np.ndarray) -> MarketTensor:
    """
    The market_tensor function marks every node of a price batch with the book-keeping model.
        Stock, option price and delta are exogenous to the hedger.

    :param config: EnvConfig: Market, option and grid
    :param prices: np.ndarray: (n_paths, n_steps + 1) stock prices
    :return: A MarketTensor with discount factors, option marks and deltas
    """
    grid, market = config.grid, config.market
    tau = time_to_maturity(config, np.arange(grid.n_steps + 1))[None, :]
    prices = np.atleast_2d(prices)
    return MarketTensor(
        times=grid.times,
        discount=discount_factor(market.rate, grid.times),
        stock=prices,
        option_price=bs_call_price(prices, config.option, tau, market.sigma, market.rate),
        delta=bs_call_delta(prices, config.option, tau, market.sigma, market.rate),
    )


def ledger(config: EnvConfig, market: MarketTensor, holdings: np.ndarray) -> Ledger:
    """
    The ledger function books the discounted stepwise P&L, costs and stepwise mean-variance cost
    for a matrix of holdings.

    :param config: EnvConfig: Friction, risk aversion and option position
    :param market: MarketTensor: Exogenous market along each path
    :param holdings: np.ndarray: (n_paths, n_steps) holdings chosen at t_0 .. t_{n-1}
    :return: A Ledger of per-step pnl, tc, cost and per-path unwind cost
    """
    disc = market.discount
    prev = np.concatenate([np.zeros((holdings.shape[0], 1)), holdings[:, :-1]], axis=1)
    stock_d = market.stock * disc
    option_d = market.option_price * disc
    position = config.option_holding * config.contract_multiplier
    tc = transaction_cost(market.stock[:, :-1], holdings - prev, config.alpha, config.beta)
    pnl = (position * (option_d[:, 1:] - option_d[:, :-1])
           + holdings * (stock_d[:, 1:] - stock_d[:, :-1])
           - disc[:-1] * tc)
    unwind = np.zeros(holdings.shape[0])
    if config.settle_unwind:
        unwind = transaction_cost(market.stock[:, -1], -holdings[:, -1], config.alpha, config.beta)
        pnl[:, -1] -= disc[-1] * unwind
    return Ledger(pnl=pnl, tc=tc, unwind_tc=unwind, cost=stepwise_cost(pnl, config.lambda_ra))


class HedgingEnv:
    def __init__(self, config: EnvConfig):
        self.config = config
        self.low, self.high = config.holding_bounds

    def make_state(self, step_index: int, stock: float, holding: float) -> HedgeState:
        config = self.config
        tau = float(time_to_maturity(config, step_index))
        return HedgeState(
            step_index=step_index,
            time=step_index * config.grid.dt,
            stock=stock,
            option_price=bs_call_price(stock, config.option, tau, config.market.sigma, config.market.rate),
            delta=bs_call_delta(stock, config.option, tau, config.market.sigma, config.market.rate),
            holding=holding,
        )

    def initial_state(self) -> HedgeState:
        return self.make_state(0, self.config.market.s0, 0.0)

    def clip(self, holding):
        return np.clip(holding, self.low, self.high)

    def step(self, state: HedgeState, new_holding: float, shock: float) -> StepOutcome:
        """
        The step function trades to new_holding at the current price, lets the market move one step
        with the given normal draw and books the discounted P&L of the whole portfolio.

        :param state: HedgeState: Current, non-terminal state
        :param new_holding: float: Target stock holding inside the action bounds
        :param shock: float: Standard normal draw driving the stock move
        :return: A StepOutcome with next state, pnl, transaction cost and stepwise cost
        """
        config = self.config
        n_steps = config.grid.n_steps
        if state.step_index >= n_steps:
            raise UsageError(TERMINAL_STEP.format(step_index=state.step_index))
        if not math.isfinite(new_holding):
            raise InvalidInputError(POLICY_NON_FINITE.format(value=new_holding, step=state.step_index))
        if not self.low - BOUNDS_TOLERANCE <= new_holding <= self.high + BOUNDS_TOLERANCE:
            raise InvalidInputError(HOLDING_OUT_OF_BOUNDS.format(holding=new_holding, low=self.low, high=self.high))

        dt = config.grid.dt
        tc = float(transaction_cost(state.stock, new_holding - state.holding, config.alpha, config.beta))
        stock_next = float(gbm_step(state.stock, dt, math.sqrt(dt) * shock, config.market))
        nxt = self.make_state(state.step_index + 1, stock_next, new_holding)

        disc_now = discount_factor(config.market.rate, state.time)
        disc_next = discount_factor(config.market.rate, nxt.time)
        position = config.option_holding * config.contract_multiplier
        pnl = (position * (disc_next * nxt.option_price - disc_now * state.option_price)
               + new_holding * (disc_next * nxt.stock - disc_now * state.stock)
               - disc_now * tc)
        done = nxt.step_index == n_steps
        unwind = 0.0
        if done and config.settle_unwind:
            unwind = float(transaction_cost(nxt.stock, -new_holding, config.alpha, config.beta))
            pnl -= disc_next * unwind
        cost = float(stepwise_cost(pnl, config.lambda_ra))
        return StepOutcome(next=nxt, new_holding=new_holding, pnl=pnl, tc=tc, unwind_tc=unwind,
                           cost=cost, reward=-cost, done=done)


def rollout(config: EnvConfig, policy: Callable[[HedgeState], float], seed: int,
            stream: int = Stream.train) -> EpisodeRecord:
    """
    The rollout function plays one episode of the environment with a state-to-holding policy.
        Finite policy outputs are clipped to the action bounds; a non-finite output aborts the episode.

    :param config: EnvConfig: Environment definition
    :param policy: Callable[[HedgeState], float]: Maps the observed state to the new holding
    :param seed: int: Seed of the single simulated path
    :param stream: int: Random substream domain
    :return: An EpisodeRecord with states, actions and step outcomes
    """
    env = HedgingEnv(config)
    shocks = simulate_paths(1, config.grid, config.market, seed, stream).shocks[0]
    state = env.initial_state()
    states, actions, outcomes = [state], [], []
    for shock in shocks:
        action = float(policy(state))
        if not math.isfinite(action):
            raise InvalidInputError(POLICY_NON_FINITE.format(value=action, step=state.step_index))
        action = float(env.clip(action))
        outcome = env.step(state, action, float(shock))
        actions.append(action)
        outcomes.append(outcome)
        state = outcome.next
        states.append(state)
    return EpisodeRecord(states=states, actions=actions, outcomes=outcomes)


def rollout_batch(config: EnvConfig, policy: BatchPolicy, paths: PathBatch) -> BatchRecord:
    """
    The rollout_batch function plays every path of a batch in lockstep with a batch policy.

    :param config: EnvConfig: Environment definition
    :param policy: BatchPolicy: Maps (step, raw feature rows) to holdings
    :param paths: PathBatch: Simulated stock paths
    :return: A BatchRecord with the market, chosen holdings and the ledger
    """
    market = market_tensor(config, paths.prices)
    low, high = config.holding_bounds
    holdings = np.zeros((market.n_paths, market.n_steps))
    prev = np.zeros(market.n_paths)
    for step in range(market.n_steps):
        chosen = np.asarray(policy.holdings(step, market.raw_features(step, prev)), dtype=float)
        if not np.all(np.isfinite(chosen)):
            bad = chosen[~np.isfinite(chosen)][0]
            raise InvalidInputError(POLICY_NON_FINITE.format(value=bad, step=step))
        prev = np.clip(chosen, low, high)
        holdings[:, step] = prev
    return BatchRecord(market=market, holdings=holdings, ledger=ledger(config, market, holdings))


def delta_hedge_policy(state: HedgeState, config: EnvConfig) -> float:
    return config.hedge_sign * state.delta * abs(config.option_holding) * config.contract_multiplier


class DeltaHedge:
    label = 'delta'

    def __init__(self, config: EnvConfig):
        self.config = config

    def __call__(self, state: HedgeState) -> float:
        return delta_hedge_policy(state, self.config)

    def holdings(self, step: int, raw: np.ndarray) -> np.ndarray:
        config = self.config
        return config.hedge_sign * raw[:, 3] * abs(config.option_holding) * config.contract_multiplier
