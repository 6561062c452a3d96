import argparse
import logging
from pathlib import Path
from typing import List

import pandas as pd

from src.exceptions import CheckpointError, InvalidInputError
from src.repository import reports
from src.repository.checkpoints import load_strategy
from src.repository.experiments import emit_histogram
from src.routes.common import add_common_flags, run_command
from src.schemas import ExperimentConfig, StrategyName
from src.services.analysis import decision_profile, simulate_strategy, summarize
from src.services.hedging_env import DeltaHedge
from src.services.market_sim import Stream, simulate_paths
from src.services.messages_templates import CHECKPOINT_NOT_FOUND, STRATEGY_MISMATCH

logger = logging.getLogger(__name__)


def resolve_strategy(config: ExperimentConfig):
    """
    The resolve_strategy function returns the agent stored at config.checkpoint, or the delta hedge for
    the configured environment when there is no checkpoint. With a checkpoint the strategy name may be
    left out; when given it must name the agent the bundle holds.

    :param config: ExperimentConfig: Strategy name, checkpoint and environment
    :return: An object with holdings() and a label
    """
    if config.checkpoint is None:
        if config.strategy in (None, StrategyName.delta):
            return DeltaHedge(config.env_config())
        raise CheckpointError(CHECKPOINT_NOT_FOUND.format(path=None))
    strategy = load_strategy(config.checkpoint)
    if config.strategy is not None and config.strategy != strategy.label:
        raise InvalidInputError(STRATEGY_MISMATCH.format(path=config.checkpoint, kind=strategy.label,
                                                         strategy=config.strategy.value))
    logger.info("loaded the %s agent from %s", strategy.label, config.checkpoint)
    return strategy


def eval_handler(args: argparse.Namespace, config: ExperimentConfig, out: Path) -> List[Path]:
    strategy = resolve_strategy(config)
    env = config.env_config()
    record = simulate_strategy(strategy, env, config.eval_episodes, config.seed)
    report = summarize(strategy.label, record.total_hedge_cost, record.total_tc)
    logger.info("%s: mean %.4f std %.4f skew %.3f mean tc %.4f", report.label, report.mean, report.std, report.skew,
                report.mean_tc)
    outputs = [
        reports.write_table(reports.report_frame([report]), out / 'report.csv'),
        reports.write_episode_dump(record, out / 'episodes.csv'),
        reports.write_episode_totals(record, out / 'totals.csv'),
        emit_histogram(report, out / 'histogram.svg'),
    ]
    if args.dump_paths:
        paths = simulate_paths(config.eval_episodes, env.grid, env.market, config.seed, Stream.test)
        outputs.append(reports.write_path_dump(paths, env.grid.times, out / 'paths.csv'))
    return outputs


def decisions_handler(args: argparse.Namespace, config: ExperimentConfig, out: Path) -> List[Path]:
    strategy = resolve_strategy(config)
    env = config.env_config()
    profile = decision_profile(strategy, env, config.eval_episodes, config.seed, args.day)
    logger.info("%s trades on step %d: std %.4f", strategy.label, profile.day, profile.day_trade_std)
    trades = pd.DataFrame({'episode': range(len(profile.day_trades)), 'trade': profile.day_trades})
    return [
        reports.write_table(profile.table, out / 'decisions.csv'),
        reports.write_table(trades, out / f'trades_step_{profile.day:03d}.csv'),
        reports.render_boxplot(list(profile.holdings.T), [str(step) for step in range(env.grid.n_steps)],
                               out / 'holdings_boxplot.svg', 'holding (shares)',
                               reference=profile.table['delta_holding_mean'].tolist()),
    ]


def register(subparsers) -> None:
    parser = subparsers.add_parser('eval', help='evaluate a strategy on test paths')
    add_common_flags(parser)
    parser.add_argument('--dump-paths', dest='dump_paths', action='store_true', help='also write the test price paths')
    parser.set_defaults(handler=lambda args: run_command('eval', args, eval_handler))

    parser = subparsers.add_parser('decisions', help='compare a strategy\'s holdings with the delta hedge')
    add_common_flags(parser)
    parser.add_argument('--day', type=int, help='step whose rebalancing trades are reported')
    parser.set_defaults(handler=lambda args: run_command('decisions', args, decisions_handler))
