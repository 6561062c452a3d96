from datetime import datetime, timezone

import numpy as np
import pandas as pd
import pytest

from src.exceptions import UsageError
from src.repository import reports
from src.schemas import RunManifest
from src.services.analysis import simulate_strategy, summarize
from src.services.hedging_env import DeltaHedge
from src.services.market_sim import Stream, simulate_paths
from tests.conftest import make_env


@pytest.fixture()
def record():
    env = make_env(n_steps=4)
    return simulate_strategy(DeltaHedge(env), env, 6, seed=21)


def test_episode_dump_is_long_format(record, tmp_path):
    frame = pd.read_csv(reports.write_episode_dump(record, tmp_path / 'episodes.csv'))
    assert list(frame.columns) == ['episode', 'step', 'time', 'stock', 'option_price', 'delta', 'holding', 'pnl',
                                   'tc', 'cost']
    assert len(frame) == 6 * 4
    row = frame[(frame['episode'] == 2) & (frame['step'] == 3)].iloc[0]
    assert row['stock'] == pytest.approx(record.market.stock[2, 3], rel=1e-11)
    assert row['holding'] == pytest.approx(record.holdings[2, 3], rel=1e-11)
    assert row['cost'] == pytest.approx(record.ledger.cost[2, 3], rel=1e-11, abs=1e-11)
    assert row['time'] == pytest.approx(3 / 365)


def test_episode_totals(record, tmp_path):
    frame = pd.read_csv(reports.write_episode_totals(record, tmp_path / 'totals.csv'))
    assert list(frame.columns) == ['episode', 'total_hedge_cost', 'total_tc']
    np.testing.assert_allclose(frame['total_hedge_cost'], record.total_hedge_cost, rtol=1e-11)


def test_path_dump_includes_maturity(tmp_path):
    env = make_env(n_steps=5)
    batch = simulate_paths(3, env.grid, env.market, 8, Stream.test)
    frame = pd.read_csv(reports.write_path_dump(batch, env.grid.times, tmp_path / 'paths.csv'))
    assert list(frame.columns) == ['path_id', 'step', 'time', 'price']
    assert len(frame) == 3 * 6
    assert (frame.loc[frame['step'] == 0, 'price'] == env.market.s0).all()
    np.testing.assert_allclose(frame['price'].to_numpy().reshape(3, 6), batch.prices, rtol=1e-11)


def test_write_table_refuses_a_directory(tmp_path):
    (tmp_path / 'taken.csv').mkdir()
    with pytest.raises(UsageError):
        reports.write_table(pd.DataFrame({'a': [1]}), tmp_path / 'taken.csv')


def test_write_table_is_stable(tmp_path):
    frame = pd.DataFrame({'x': [0.1, 1 / 3, 2.0]})
    first = reports.write_table(frame, tmp_path / 'a.csv').read_bytes()
    assert first == reports.write_table(frame, tmp_path / 'b.csv').read_bytes()
    assert b'\r' not in first


def test_report_frame_columns(rng):
    report = summarize('delta', rng.normal(size=100), np.zeros(100))
    frame = reports.report_frame([report, report.copy(update={'label': 'other'})])
    assert list(frame['label']) == ['delta', 'other']
    assert {'q1', 'q50', 'q99', 'mean_tc'} <= set(frame.columns)


def test_learning_curve_is_one_based(tmp_path):
    frame = pd.read_csv(reports.write_learning_curve([3.0, 2.0, 1.0], tmp_path / 'curve.csv', 'epoch', 'loss'))
    assert list(frame['epoch']) == [1, 2, 3]
    assert list(frame['loss']) == [3.0, 2.0, 1.0]


def test_figures_return_their_path(tmp_path):
    curves = reports.render_curves({'seed 1': [1.0, 2.0]}, tmp_path / 'curves.svg', 'episode', 'reward')
    heatmap = reports.render_heatmap(np.eye(3), ['a', 'b', 'c'], tmp_path / 'heat.svg')
    box = reports.render_boxplot([np.arange(5.0), np.arange(3.0)], ['0', '1'], tmp_path / 'box.svg', 'shares',
                                 reference=[1.0, 2.0])
    for path in (curves, heatmap, box):
        assert path.is_file()


def test_manifest_round_trip(tmp_path):
    manifest = RunManifest(command='eval', config={'seed': 1}, seeds=[1], version='1.0.0',
                           outputs=['report.csv'], started_at=datetime(2026, 1, 2, tzinfo=timezone.utc))
    path = reports.write_manifest(manifest, tmp_path / 'manifest.json')
    assert RunManifest.parse_file(path) == manifest
