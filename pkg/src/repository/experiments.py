"""
Sweeps and multi-seed stability runs: they train, evaluate and write their
tables and figures under one output directory.
"""
import asyncio
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.conf.config import settings
from src.exceptions import UsageError
from src.repository import reports
from src.repository.checkpoints import load_strategy, save_strategy
from src.schemas import ENV_AXES, EvalReport, ExperimentConfig, StrategyName, SweepAxis, SweepSpec
from src.services.analysis import QUANTILES, apply_axis, evaluate, train_strategy
from src.services.hedging_env import DeltaHedge
from src.services.messages_templates import CELL_FAILED, EMPTY_REPORT, INVALID_CELL, NOT_ENOUGH_SEEDS, UNKNOWN_STRATEGY

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = (['axis', 'value', 'strategy', 'seed', 'status', 'error', 'n_episodes', 'mean', 'std', 'skew']
                 + [f'q{q}' for q in QUANTILES] + ['mean_tc', 'histogram', 'learning_curve'])


def emit_histogram(report: EvalReport, path: str | Path) -> Path:
    """
    The emit_histogram function renders an EvalReport's histogram to SVG; identical reports give identical bytes.

    :param report: EvalReport: Report with at least one bin
    :param path: str | Path: Destination file
    :return: The written path
    """
    if not report.counts:
        raise UsageError(EMPTY_REPORT)
    return reports.render_histogram(report, path)


def cell_name(value) -> str:
    return re.sub(r'[^0-9A-Za-z.+-]+', '_', json.dumps(value)).strip('_')


def curve_axes(kind: StrategyName) -> tuple[str, str]:
    if kind == StrategyName.deep_mvh:
        return 'epoch', 'mean_log_loss'
    return 'episode', 'cumulative_reward'


def train_and_save(base: dict, strategy: str, seed: int, directory: str) -> str:
    agent, _ = train_strategy(StrategyName(strategy), ExperimentConfig(**base), seed)
    save_strategy(agent, directory)
    return directory


def run_cell(base: dict, axis: str, value, strategy: str, seed: int, test_seed: int, episodes: int,
             out_dir: str, frozen: Optional[str] = None) -> dict:
    """
    The run_cell function trains (or loads) one strategy for one grid value and evaluates it.
        Runs in a worker process, so it takes and returns plain data.
        A strategy trained for the cell also leaves its learning curve next to the histogram.

    :param base: dict: Base ExperimentConfig fields
    :param axis: str: Swept quantity
    :param value: Grid value
    :param strategy: str: Strategy name
    :param seed: int: Training seed
    :param test_seed: int: Evaluation seed
    :param episodes: int: Test episodes
    :param out_dir: str: Sweep output directory
    :param frozen: str | None: Bundle of an agent trained once on the base experiment
    :return: One row of the sweep table
    """
    try:
        config = apply_axis(ExperimentConfig(**base), SweepAxis(axis), value)
        env = config.env_config()
    except ValueError as err:
        # pydantic errors do not survive the trip back from a worker
        raise UsageError(INVALID_CELL.format(axis=axis, value=value, reason=err)) from None
    name = StrategyName(strategy)
    cell_dir = Path('cells') / f'{axis}_{cell_name(value)}'
    learning_curve = None
    if name == StrategyName.delta:
        agent = DeltaHedge(env)
    elif frozen is not None:
        agent = load_strategy(frozen)
    else:
        agent, curve = train_strategy(name, config, seed)
        learning_curve = cell_dir / f'{strategy}_seed{seed}_curve.csv'
        reports.write_learning_curve(curve, Path(out_dir) / learning_curve, *curve_axes(name))
    report = evaluate(agent, env, episodes, test_seed, label=f'{strategy} {axis}={json.dumps(value)}')
    histogram = cell_dir / f'{strategy}_seed{seed}.svg'
    emit_histogram(report, Path(out_dir) / histogram)
    row = {'axis': axis, 'value': json.dumps(value), 'strategy': strategy, 'seed': seed, 'status': 'ok', 'error': '',
           'n_episodes': report.n_episodes, 'mean': report.mean, 'std': report.std, 'skew': report.skew,
           'mean_tc': report.mean_tc, 'histogram': histogram.as_posix()}
    row.update({f'q{key}': value for key, value in report.quantiles.items()})
    if learning_curve is not None:
        row['learning_curve'] = learning_curve.as_posix()
    return row


def failed_row(axis: str, value, strategy: str, seed: int, error: BaseException) -> dict:
    logger.warning(CELL_FAILED.format(axis=axis, value=value, strategy=strategy, seed=seed, reason=error))
    return {'axis': axis, 'value': json.dumps(value), 'strategy': strategy, 'seed': seed, 'status': 'failed',
            'error': f'{type(error).__name__}: {error}'}


async def run_sweep(spec: SweepSpec, out_dir: str | Path, workers: Optional[int] = None) -> pd.DataFrame:
    """
    The run_sweep function evaluates every (grid value, strategy, seed) cell in a process pool.
        Environment axes retrain per cell unless spec.frozen_agent reuses agents trained on the base experiment.
        A failing cell becomes a 'failed' row; the sweep carries on.

    :param spec: SweepSpec: Axis, grid, strategies, seeds and episode count
    :param out_dir: str | Path: Directory for sweep.csv, cell histograms and learning curves, and frozen agents
    :param workers: int | None: Pool size, defaults to settings.workers
    :return: The long-format sweep table, also written to out_dir/sweep.csv
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    axis = spec.axis.value
    base = spec.base.dict()
    loop = asyncio.get_running_loop()
    frozen: Dict[tuple, object] = {}
    rows: Dict[tuple, dict] = {}
    with ProcessPoolExecutor(max_workers=workers or settings.workers) as pool:
        if spec.frozen_agent and spec.axis in ENV_AXES:
            keys = [(s.value, seed) for s in spec.strategies if s != StrategyName.delta for seed in spec.seeds]
            jobs = [loop.run_in_executor(pool, train_and_save, base, strategy, seed,
                                         str(out_dir / 'frozen' / f'{strategy}_seed{seed}'))
                    for strategy, seed in keys]
            frozen = dict(zip(keys, await asyncio.gather(*jobs, return_exceptions=True)))
        elif spec.frozen_agent:
            logger.warning("frozen agents only apply to environment axes; retraining for %s", axis)

        cells, jobs = [], []
        for index, value in enumerate(spec.values):
            test_seed = spec.base.seed if spec.common_random_numbers else spec.base.seed + index + 1
            for strategy in spec.strategies:
                for seed in spec.seeds:
                    key = (index, strategy.value, seed)
                    bundle = frozen.get((strategy.value, seed))
                    if isinstance(bundle, BaseException):
                        rows[key] = failed_row(axis, value, strategy.value, seed, bundle)
                        continue
                    cells.append((key, value))
                    jobs.append(loop.run_in_executor(pool, run_cell, base, axis, value, strategy.value, seed,
                                                     test_seed, spec.episodes, str(out_dir), bundle))
        for (key, value), result in zip(cells, await asyncio.gather(*jobs, return_exceptions=True)):
            rows[key] = failed_row(axis, value, key[1], key[2], result) if isinstance(result, BaseException) else result

    ordered = [rows[key] for key in sorted(rows)]
    frame = pd.DataFrame(ordered).reindex(columns=SWEEP_COLUMNS)
    reports.write_table(frame, out_dir / 'sweep.csv')
    overlay_learning_curves(frame, out_dir)
    logger.info("sweep over %s: %d cells, %d failed", axis, len(frame), int((frame['status'] == 'failed').sum()))
    return frame


def overlay_learning_curves(frame: pd.DataFrame, out_dir: str | Path) -> List[Path]:
    """
    The overlay_learning_curves function draws, for every trained strategy in a sweep, the learning curves
    of all its cells on one figure, learning_curves_<strategy>.svg.

    :param frame: pd.DataFrame: Sweep table whose learning_curve column points at per-cell CSVs
    :param out_dir: str | Path: Sweep output directory
    :return: The written figures
    """
    out_dir = Path(out_dir)
    written = []
    trained = frame[frame['learning_curve'].notna()]
    for strategy, rows in trained.groupby('strategy', sort=True):
        index_name, value_name = curve_axes(StrategyName(strategy))
        several_seeds = rows['seed'].nunique() > 1
        curves = {}
        for row in rows.itertuples():
            name = f'{row.axis}={row.value}' + (f' seed {row.seed}' if several_seeds else '')
            curves[name] = pd.read_csv(out_dir / row.learning_curve)[value_name].to_numpy()
        written.append(reports.render_curves(curves, out_dir / f'learning_curves_{strategy}.svg', index_name,
                                             value_name))
    return written


def inverse_signed_log(y: float) -> float:
    return math.copysign(math.expm1(abs(y)), y)


@dataclass
class StabilityBundle:
    kind: StrategyName
    curves: Dict[int, np.ndarray]
    final: Dict[int, float]

    @property
    def spread(self) -> float:
        values = list(self.final.values())
        return max(values) - min(values)


def training_stability(kind: StrategyName, n_seeds: int, config: ExperimentConfig, out_dir: str | Path,
                       progress: bool = False) -> StabilityBundle:
    """
    The training_stability function retrains one agent kind under several seeds and overlays the curves.
        Final values are the mean of the last tenth of each curve; deep-MVH finals are mapped back from
        the signed-log scale to losses.

    :param kind: StrategyName: ddpg or deep_mvh
    :param n_seeds: int: Number of seeds, at least 2 (config.seed, config.seed + 1, ...)
    :param config: ExperimentConfig: Experiment to retrain
    :param out_dir: str | Path: Directory for the curves CSV and the overlay SVG
    :param progress: bool: Show progress bars
    :return: Curves and final values per seed
    """
    if n_seeds < 2:
        raise UsageError(NOT_ENOUGH_SEEDS.format(count=n_seeds))
    if kind is None or StrategyName(kind) == StrategyName.delta:
        raise UsageError(UNKNOWN_STRATEGY.format(name=kind))
    kind = StrategyName(kind)
    out_dir = Path(out_dir)
    curves, final = {}, {}
    for seed in range(config.seed, config.seed + n_seeds):
        _, curve = train_strategy(kind, config, seed, progress=progress)
        curves[seed] = curve
        tail = float(np.mean(curve[-max(1, len(curve) // 10):]))
        final[seed] = inverse_signed_log(tail) if kind == StrategyName.deep_mvh else tail
    index_name, value_name = curve_axes(kind)
    frame = pd.concat([pd.DataFrame({'seed': seed, index_name: np.arange(1, len(curve) + 1), value_name: curve})
                       for seed, curve in curves.items()], ignore_index=True)
    reports.write_table(frame, out_dir / f'stability_{kind.value}.csv')
    reports.render_curves({f'seed {seed}': curve for seed, curve in curves.items()},
                          out_dir / f'stability_{kind.value}.svg', index_name, value_name)
    bundle = StabilityBundle(kind=kind, curves=curves, final=final)
    logger.info("%s stability over %d seeds: final values %s, spread %.4g", kind.value, n_seeds, final, bundle.spread)
    return bundle
