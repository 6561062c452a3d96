"""
CSV tables, SVG figures and JSON manifests written by the command line.

Figures use the Agg backend with a fixed SVG hash salt and no date metadata so
identical inputs produce identical bytes.
"""
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.exceptions import UsageError  # noqa: E402
from src.schemas import EvalReport, RunManifest, ShapResult  # noqa: E402
from src.services.hedging_env import BatchRecord  # noqa: E402
from src.services.market_sim import PathBatch  # noqa: E402
from src.services.messages_templates import EMPTY_REPORT, PATH_NOT_WRITABLE  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams['svg.hashsalt'] = 'mvh-hedging-lab'
matplotlib.rcParams['svg.fonttype'] = 'none'
FLOAT_FORMAT = '%.12g'


def _prepare(path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise UsageError(PATH_NOT_WRITABLE.format(path=path, reason=err)) from err
    if path.is_dir():
        raise UsageError(PATH_NOT_WRITABLE.format(path=path, reason='is a directory'))
    return path


def write_table(frame: pd.DataFrame, path: str | Path) -> Path:
    path = _prepare(path)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    except OSError as err:
        raise UsageError(PATH_NOT_WRITABLE.format(path=path, reason=err)) from err
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def _save_figure(fig, path: str | Path) -> Path:
    path = _prepare(path)
    try:
        fig.savefig(path, format='svg', metadata={'Date': None})
    except OSError as err:
        raise UsageError(PATH_NOT_WRITABLE.format(path=path, reason=err)) from err
    finally:
        plt.close(fig)
    return path


def write_learning_curve(curve: Sequence[float], path: str | Path, index_name: str = 'episode',
                         value_name: str = 'cumulative_reward') -> Path:
    frame = pd.DataFrame({index_name: np.arange(1, len(curve) + 1), value_name: np.asarray(curve, dtype=float)})
    return write_table(frame, path)


def write_episode_dump(record: BatchRecord, path: str | Path) -> Path:
    """One row per (episode, step) with the state seen, the holding chosen and the booked amounts."""
    n_paths, n_steps = record.holdings.shape
    market, booked = record.market, record.ledger
    frame = pd.DataFrame({
        'episode': np.repeat(np.arange(n_paths), n_steps),
        'step': np.tile(np.arange(n_steps), n_paths),
        'time': np.tile(market.times[:-1], n_paths),
        'stock': market.stock[:, :-1].ravel(),
        'option_price': market.option_price[:, :-1].ravel(),
        'delta': market.delta[:, :-1].ravel(),
        'holding': record.holdings.ravel(),
        'pnl': booked.pnl.ravel(),
        'tc': booked.tc.ravel(),
        'cost': booked.cost.ravel(),
    })
    return write_table(frame, path)


def write_episode_totals(record: BatchRecord, path: str | Path) -> Path:
    frame = pd.DataFrame({'episode': np.arange(record.holdings.shape[0]), 'total_hedge_cost': record.total_hedge_cost,
                          'total_tc': record.total_tc})
    return write_table(frame, path)


def write_path_dump(batch: PathBatch, times: np.ndarray, path: str | Path) -> Path:
    n_paths, n_nodes = batch.prices.shape
    frame = pd.DataFrame({'path_id': np.repeat(np.arange(n_paths), n_nodes), 'step': np.tile(np.arange(n_nodes), n_paths),
                          'time': np.tile(times, n_paths), 'price': batch.prices.ravel()})
    return write_table(frame, path)


def report_frame(reports: Iterable[EvalReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        row = {'label': report.label, 'n_episodes': report.n_episodes, 'mean': report.mean, 'std': report.std,
               'skew': report.skew, 'mean_tc': report.mean_tc}
        row.update({f'q{key}': value for key, value in report.quantiles.items()})
        rows.append(row)
    return pd.DataFrame(rows)


def write_shap(result: ShapResult, path: str | Path) -> Path:
    n, p = result.phi.shape
    frame = pd.DataFrame({'instance': np.repeat(np.arange(n), p), 'feature': np.tile(result.features, n),
                          'phi': result.phi.ravel()})
    return write_table(frame, path)


def write_heatmap(matrix: np.ndarray, features: List[str], path: str | Path) -> Path:
    n_steps, p = matrix.shape
    frame = pd.DataFrame({'step': np.repeat(np.arange(n_steps), p), 'feature': np.tile(features, n_steps),
                          'importance': matrix.ravel()})
    return write_table(frame, path)


def render_histogram(report: EvalReport, path: str | Path) -> Path:
    """
    The render_histogram function draws the report's stored bins as bars, one bar per bin edge pair.

    :param report: EvalReport: Report with at least one bin
    :param path: str | Path: SVG destination
    :return: The written path
    """
    if not report.counts:
        raise UsageError(EMPTY_REPORT)
    edges = np.asarray(report.bin_edges)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], report.counts, width=np.diff(edges), align='edge', edgecolor='black', linewidth=0.5)
    ax.set_xlabel('total hedging cost (positive = loss)')
    ax.set_ylabel('episodes')
    ax.set_title(f'{report.label}: mean {report.mean:.3f}, std {report.std:.3f}')
    return _save_figure(fig, path)


def render_curves(curves: Dict[str, Sequence[float]], path: str | Path, xlabel: str, ylabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in sorted(curves):
        values = np.asarray(curves[name], dtype=float)
        ax.plot(np.arange(1, len(values) + 1), values, label=name, linewidth=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save_figure(fig, path)


def render_heatmap(matrix: np.ndarray, features: List[str], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 8))
    image = ax.imshow(matrix, aspect='auto', cmap='viridis', interpolation='nearest')
    ax.set_xticks(range(len(features)))
    ax.set_xticklabels(features, rotation=45, ha='right')
    ax.set_ylabel('trading step')
    fig.colorbar(image, ax=ax, label='SHAP variable importance')
    fig.tight_layout()
    return _save_figure(fig, path)


def render_boxplot(groups: Sequence[np.ndarray], labels: Sequence[str], path: str | Path, ylabel: str,
                   reference: Sequence[float] | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.boxplot([np.asarray(g, dtype=float) for g in groups], showfliers=False)
    ax.set_xticks(range(1, len(labels) + 1))
    ax.set_xticklabels(labels)
    if reference is not None:
        ax.plot(range(1, len(reference) + 1), reference, 'r.-', linewidth=0.8, label='delta hedge')
        ax.legend()
    ax.set_xlabel('trading step')
    ax.set_ylabel(ylabel)
    return _save_figure(fig, path)


def write_manifest(manifest: RunManifest, path: str | Path) -> Path:
    path = _prepare(path)
    try:
        path.write_text(json.dumps(json.loads(manifest.json()), indent=2, sort_keys=True))
    except OSError as err:
        raise UsageError(PATH_NOT_WRITABLE.format(path=path, reason=err)) from err
    return path
