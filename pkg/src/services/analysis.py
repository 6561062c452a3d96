"""
Evaluation statistics, strategy training dispatch and sweep-axis handling.

Total hedging cost is reported with positive values meaning a loss for the
trader. Test paths always come from the test substream, so they never overlap
the paths an agent was trained on.
"""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd
from scipy.stats import skew

from src.conf.config import settings
from src.exceptions import UsageError
from src.schemas import EnvConfig, EvalReport, ExperimentConfig, StrategyName, SweepAxis
from src.services.ddpg_agent import train as train_ddpg
from src.services.deep_mvh import train_mvh
from src.services.hedging_env import BatchRecord, DeltaHedge, rollout_batch
from src.services.market_sim import Stream, simulate_paths
from src.services.messages_templates import STEP_OUT_OF_RANGE, UNKNOWN_AXIS, UNKNOWN_STRATEGY

logger = logging.getLogger(__name__)

QUANTILES = (1, 5, 25, 50, 75, 95, 99)


def histogram_bins(bins: Optional[str] = None):
    bins = bins or settings.histogram_bins
    return int(bins) if str(bins).isdigit() else bins


def summarize(label: str, total_cost: np.ndarray, total_tc: np.ndarray, bins: Optional[str] = None) -> EvalReport:
    """
    The summarize function condenses per-episode totals into an EvalReport.

    :param label: str: Strategy label
    :param total_cost: np.ndarray: Total hedging cost per episode, positive = loss
    :param total_tc: np.ndarray: Total discounted transaction cost per episode
    :param bins: str | None: numpy histogram rule or bin count, defaults to settings.histogram_bins
    :return: Moments, quantiles and the histogram of the totals
    """
    costs = np.asarray(total_cost, dtype=float)
    n = costs.shape[0]
    std = float(np.std(costs, ddof=1)) if n > 1 else 0.0
    counts, edges = np.histogram(costs, bins=histogram_bins(bins))
    return EvalReport(
        label=label,
        n_episodes=n,
        mean=float(costs.mean()),
        std=std,
        skew=float(skew(costs)) if std > 0 else 0.0,
        quantiles={str(q): float(v) for q, v in zip(QUANTILES, np.percentile(costs, QUANTILES))},
        bin_edges=edges.tolist(),
        counts=counts.tolist(),
        mean_tc=float(np.mean(total_tc)),
    )


def simulate_strategy(strategy, env: EnvConfig, n_episodes: int, seed: int) -> BatchRecord:
    n_steps = getattr(strategy, 'n_steps', env.grid.n_steps)
    if n_steps != env.grid.n_steps:
        raise UsageError(STEP_OUT_OF_RANGE.format(step=n_steps, n_steps=env.grid.n_steps))
    paths = simulate_paths(n_episodes, env.grid, env.market, seed, Stream.test)
    return rollout_batch(env, strategy, paths)


def evaluate(strategy, env: EnvConfig, n_episodes: int, seed: int, label: Optional[str] = None,
             bins: Optional[str] = None) -> EvalReport:
    """
    The evaluate function runs a frozen strategy on test-stream paths and reports the total hedging cost.

    :param strategy: Delta hedge, DDPG agent or deep-MVH stack (anything with holdings())
    :param env: EnvConfig: Test environment
    :param n_episodes: int: Number of test episodes
    :param seed: int: Test seed
    :param label: str | None: Report label, defaults to the strategy's own
    :param bins: str | None: Histogram rule override
    :return: The EvalReport
    """
    record = simulate_strategy(strategy, env, n_episodes, seed)
    report = summarize(label or strategy.label, record.total_hedge_cost, record.total_tc, bins)
    logger.info("%s: mean %.4f std %.4f over %d episodes", report.label, report.mean, report.std, n_episodes)
    return report


def train_strategy(name: StrategyName, config: ExperimentConfig, seed: int, progress: bool = False,
                   checkpoint: Optional[Callable] = None) -> tuple[Any, np.ndarray]:
    name = StrategyName(name)
    env = config.env_config()
    if name == StrategyName.delta:
        return DeltaHedge(env), np.zeros(0)
    if name == StrategyName.ddpg:
        return train_ddpg(config.ddpg_config(), env, seed, progress=progress, checkpoint=checkpoint,
                          checkpoint_every=max(1, config.ddpg_episodes // 10) if checkpoint else 0)
    if name == StrategyName.deep_mvh:
        return train_mvh(config.mvh_config(), env, seed, progress=progress, checkpoint=checkpoint)
    raise UsageError(UNKNOWN_STRATEGY.format(name=name))


def apply_axis(config: ExperimentConfig, axis: SweepAxis, value) -> ExperimentConfig:
    """
    The apply_axis function sets one sweep grid value on a base experiment.
        A learning-rate value is either a float or an [actor, critic] pair; a float x gives DDPG
        (x, 10 x) and deep-MVH x with its decay switched off. An architecture value sets the deep-MVH
        hidden layers and the DDPG actor (the critic stays as configured).

    :param config: ExperimentConfig: Base experiment
    :param axis: SweepAxis: Swept quantity
    :param value: Grid value
    :return: The experiment for this grid cell
    """
    axis = SweepAxis(axis)
    if axis == SweepAxis.alpha:
        return config.with_overrides(alpha=float(value))
    if axis == SweepAxis.lambda_ra:
        return config.with_overrides(lambda_ra=float(value))
    if axis == SweepAxis.sigma:
        return config.with_overrides(sigma=float(value))
    if axis == SweepAxis.maturity:
        return config.with_overrides(maturity_days=int(value))
    if axis == SweepAxis.gamma:
        return config.with_overrides(gamma=float(value))
    if axis == SweepAxis.lr:
        if isinstance(value, (list, tuple)):
            actor_lr, critic_lr = float(value[0]), float(value[1])
        else:
            actor_lr, critic_lr = float(value), 10.0 * float(value)
        return config.with_overrides(ddpg_actor_lr=actor_lr, ddpg_critic_lr=critic_lr, mvh_lr=actor_lr,
                                     mvh_lr_decay=False)
    if axis == SweepAxis.architecture:
        hidden = [int(v) for v in value] if isinstance(value, (list, tuple)) else [int(value)]
        return config.with_overrides(mvh_hidden=hidden, ddpg_actor_hidden=hidden)
    raise UsageError(UNKNOWN_AXIS.format(name=axis))


@dataclass
class DecisionProfile:
    table: pd.DataFrame
    holdings: np.ndarray
    delta_holdings: np.ndarray
    day: int
    day_trades: np.ndarray

    @property
    def day_trade_std(self) -> float:
        return float(np.std(self.day_trades, ddof=1)) if self.day_trades.shape[0] > 1 else 0.0


def decision_profile(strategy, env: EnvConfig, n_episodes: int, seed: int, day: Optional[int] = None) -> DecisionProfile:
    """
    The decision_profile function compares a strategy's holdings with the delta hedge step by step.

    :param strategy: Strategy under study
    :param env: EnvConfig: Test environment
    :param n_episodes: int: Test episodes
    :param seed: int: Test seed
    :param day: int | None: Step whose rebalancing trades are reported, defaults to mid-life
    :return: Per-step statistics, the raw holdings and the trades on the chosen day
    """
    record = simulate_strategy(strategy, env, n_episodes, seed)
    n_steps = env.grid.n_steps
    day = n_steps // 2 if day is None else day
    if not 0 <= day < n_steps:
        raise UsageError(STEP_OUT_OF_RANGE.format(step=day, n_steps=n_steps))
    holdings = record.holdings
    delta_holdings = (env.hedge_sign * abs(env.option_holding) * env.contract_multiplier
                      * record.market.delta[:, :-1])
    prev = np.concatenate([np.zeros((holdings.shape[0], 1)), holdings[:, :-1]], axis=1)
    trades = holdings - prev
    gap = holdings - delta_holdings
    q25, q50, q75 = np.percentile(holdings, [25, 50, 75], axis=0)
    table = pd.DataFrame({
        'step': np.arange(n_steps),
        'holding_mean': holdings.mean(axis=0),
        'holding_q25': q25,
        'holding_median': q50,
        'holding_q75': q75,
        'delta_holding_mean': delta_holdings.mean(axis=0),
        'gap_mean': gap.mean(axis=0),
        'gap_std': gap.std(axis=0),
        'trade_std': trades.std(axis=0),
    })
    return DecisionProfile(table=table, holdings=holdings, delta_holdings=delta_holdings, day=day,
                           day_trades=trades[:, day])
