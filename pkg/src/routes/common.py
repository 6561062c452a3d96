import argparse
import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, List

from src import __version__
from src.conf.config import load_config_file, settings
from src.exceptions import ConfigurationError
from src.repository import reports
from src.schemas import ExperimentConfig, Parametrization, RunManifest, StrategyName
from src.services.messages_templates import CONFIG_FILE_INVALID

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, ExperimentConfig, Path], List[Path]]


def add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='TOML experiment file, or a manifest.json to reproduce a run')
    parser.add_argument('--seed', type=int, help='root seed')
    parser.add_argument('--out', help='output directory (default: HEDGE_OUTPUT_DIR/<command>)')
    parser.add_argument('--episodes', type=int,
                        help='training episodes (train-ddpg), epochs (train-mvh) or test episodes (other commands)')
    parser.add_argument('--no-delta-feature', dest='include_delta', action='store_false', default=None,
                        help='drop the option delta from the policy inputs')
    parser.add_argument('--parametrization', choices=[p.value for p in Parametrization],
                        help='deep-MVH output: holding rate or direct holding')
    parser.add_argument('--strategy', choices=[s.value for s in StrategyName])
    parser.add_argument('--checkpoint', help='agent bundle directory')
    parser.add_argument('--progress', action='store_true', help='show progress bars')


def read_experiment(path: str | None) -> ExperimentConfig:
    """
    The read_experiment function loads the experiment document; a manifest.json yields the config it recorded.

    :param path: str | None: TOML file or manifest, None for the defaults
    :return: The validated ExperimentConfig
    """
    if path is None:
        return ExperimentConfig(seed=settings.seed)
    if Path(path).suffix == '.json':
        try:
            return ExperimentConfig(**RunManifest.parse_file(path).config)
        except (OSError, ValueError) as err:
            raise ConfigurationError(CONFIG_FILE_INVALID.format(path=path, reason=err)) from err
    try:
        return ExperimentConfig(**load_config_file(path))
    except ValueError as err:
        raise ConfigurationError(CONFIG_FILE_INVALID.format(path=path, reason=err)) from err


def experiment_from_args(args: argparse.Namespace, episodes_field: str = 'eval_episodes') -> ExperimentConfig:
    config = read_experiment(args.config)
    overrides = {
        'seed': args.seed,
        episodes_field: args.episodes,
        'include_delta': args.include_delta,
        'mvh_parametrization': args.parametrization,
        'strategy': args.strategy,
        'checkpoint': args.checkpoint,
        'frozen_agent': getattr(args, 'frozen_agent', None),
    }
    return config.with_overrides(**{key: value for key, value in overrides.items()
                                    if key in ExperimentConfig.__fields__})


def run_command(name: str, args: argparse.Namespace, handler: Handler, episodes_field: str = 'eval_episodes') -> Path:
    """
    The run_command function resolves the experiment, runs a handler and records a RunManifest
    listing every file it produced.

    :param name: str: Subcommand name
    :param args: argparse.Namespace: Parsed flags
    :param handler: Handler: Does the work, returns the written paths
    :param episodes_field: str: ExperimentConfig field that --episodes overrides
    :return: The manifest path
    """
    config = experiment_from_args(args, episodes_field)
    out = Path(args.out or Path(settings.output_dir) / name)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    manifest = RunManifest(command=name, config=json.loads(config.json()), seeds=[config.seed], version=__version__,
                           started_at=datetime.now(timezone.utc))
    outputs = handler(args, config, out)
    manifest.outputs = sorted({Path(path).relative_to(out).as_posix() if Path(path).is_relative_to(out)
                               else str(path) for path in outputs})
    manifest.wall_clock_seconds = time.perf_counter() - started
    path = reports.write_manifest(manifest, out / 'manifest.json')
    logger.info("%s finished: %d outputs in %s", name, len(manifest.outputs), out)
    return path
