import argparse
import json
import logging
from pathlib import Path
from typing import List

from src.exceptions import TrainingDivergedError
from src.repository import reports
from src.repository.checkpoints import save_ddpg, save_stack, save_strategy
from src.routes.common import add_common_flags, run_command
from src.schemas import ExperimentConfig, StrategyName
from src.services.analysis import train_strategy

logger = logging.getLogger(__name__)


def dump_divergence(err: TrainingDivergedError, out: Path) -> None:
    """
    The dump_divergence function writes the diagnostics of a diverged run next to its outputs,
    plus the last agent that trained cleanly when there is one.

    :param err: TrainingDivergedError: The failure
    :param out: Path: Run directory
    :return: None
    """
    (out / 'diverged.json').write_text(json.dumps(err.diagnostics, indent=2, sort_keys=True, default=str))
    if err.last_good is not None:
        save_strategy(err.last_good, out / 'last_good')
    logger.error("training diverged, diagnostics in %s", out / 'diverged.json')


def train_ddpg_handler(args: argparse.Namespace, config: ExperimentConfig, out: Path) -> List[Path]:
    outputs: List[Path] = []

    def checkpoint(agent, episode: int) -> None:
        outputs.append(save_ddpg(agent, out / 'checkpoints' / f'episode_{episode:05d}'))

    try:
        agent, curve = train_strategy(StrategyName.ddpg, config, config.seed, progress=args.progress,
                                      checkpoint=checkpoint)
    except TrainingDivergedError as err:
        dump_divergence(err, out)
        raise
    outputs.append(save_ddpg(agent, out / 'agent'))
    outputs.append(reports.write_learning_curve(curve, out / 'learning_curve.csv'))
    outputs.append(reports.render_curves({'ddpg': curve}, out / 'learning_curve.svg', 'episode', 'cumulative reward'))
    return outputs


def train_mvh_handler(args: argparse.Namespace, config: ExperimentConfig, out: Path) -> List[Path]:
    outputs: List[Path] = []

    def checkpoint(stack, epoch: int) -> None:
        save_stack(stack, out / 'checkpoints' / 'latest')

    try:
        stack, curve = train_strategy(StrategyName.deep_mvh, config, config.seed, progress=args.progress,
                                      checkpoint=checkpoint)
    except TrainingDivergedError as err:
        dump_divergence(err, out)
        raise
    outputs.append(out / 'checkpoints' / 'latest')
    outputs.append(save_stack(stack, out / 'agent'))
    outputs.append(reports.write_learning_curve(curve, out / 'learning_curve.csv', 'epoch', 'mean_log_loss'))
    outputs.append(reports.render_curves({'deep-MVH': curve}, out / 'learning_curve.svg', 'epoch',
                                         'signed log of mean training loss'))
    return outputs


def register(subparsers) -> None:
    parser = subparsers.add_parser('train-ddpg', help='train the DDPG hedger')
    add_common_flags(parser)
    parser.set_defaults(handler=lambda args: run_command('train-ddpg', args, train_ddpg_handler, 'ddpg_episodes'))

    parser = subparsers.add_parser('train-mvh', help='train the deep-MVH policy stack')
    add_common_flags(parser)
    parser.set_defaults(handler=lambda args: run_command('train-mvh', args, train_mvh_handler, 'mvh_epochs'))
