import argparse
import asyncio
from pathlib import Path
from typing import List

from src.repository.experiments import run_sweep, training_stability
from src.routes.common import add_common_flags, run_command
from src.schemas import ExperimentConfig


def sweep_handler(args: argparse.Namespace, config: ExperimentConfig, out: Path) -> List[Path]:
    frame = asyncio.run(run_sweep(config.sweep_spec(), out, args.workers))
    outputs = [out / 'sweep.csv']
    outputs += [out / path for path in frame['histogram'].dropna()]
    outputs += [out / path for path in frame['learning_curve'].dropna()]
    outputs += sorted(out.glob('learning_curves_*.svg'))
    if config.frozen_agent and (out / 'frozen').is_dir():
        outputs += sorted((out / 'frozen').iterdir())
    return outputs


def stability_handler(args: argparse.Namespace, config: ExperimentConfig, out: Path) -> List[Path]:
    n_seeds = args.n_seeds if args.n_seeds is not None else config.stability_seeds
    bundle = training_stability(config.strategy, n_seeds, config, out, progress=args.progress)
    return [out / f'stability_{bundle.kind.value}.csv', out / f'stability_{bundle.kind.value}.svg']


def register(subparsers) -> None:
    parser = subparsers.add_parser('sweep', help='evaluate strategies over a parameter grid')
    add_common_flags(parser)
    parser.add_argument('--frozen-agent', dest='frozen_agent', action='store_true', default=None,
                        help='train once on the base experiment instead of per grid value')
    parser.add_argument('--workers', type=int, help='parallel cells (default: HEDGE_WORKERS)')
    parser.set_defaults(handler=lambda args: run_command('sweep', args, sweep_handler))

    parser = subparsers.add_parser('stability', help='retrain one agent under several seeds')
    add_common_flags(parser)
    parser.add_argument('--n-seeds', dest='n_seeds', type=int, help='number of seeds (at least 2)')
    parser.set_defaults(handler=lambda args: run_command('stability', args, stability_handler))
