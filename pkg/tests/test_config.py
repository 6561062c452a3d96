from pathlib import Path

import pytest

from src.conf.config import Settings, load_config_file
from src.exceptions import ConfigurationError
from src.routes.common import read_experiment
from src.schemas import ExperimentConfig, Parametrization, StrategyName, SweepAxis
from src.services.analysis import apply_axis

CONFIG_DIR = Path(__file__).resolve().parents[1] / 'configs'


def test_default_document():
    data = load_config_file(CONFIG_DIR / 'default.toml')
    assert data['seed'] == 2023
    assert data['include_delta'] is True
    config = ExperimentConfig(**data)
    assert config.mvh_parametrization == Parametrization.rate
    assert config.env_config().grid.n_steps == 30


@pytest.mark.parametrize('path', sorted(CONFIG_DIR.glob('*.toml')), ids=lambda p: p.stem)
def test_shipped_documents_validate(path):
    config = ExperimentConfig(**load_config_file(path))
    assert config.sweep_spec().values


def test_sweep_document_axis():
    config = ExperimentConfig(**load_config_file(CONFIG_DIR / 'alpha_sweep.toml'))
    assert config.sweep_axis == SweepAxis.alpha


def test_gamma_sweep_document_trains_ddpg():
    config = ExperimentConfig(**load_config_file(CONFIG_DIR / 'ddpg_gamma_sweep.toml'))
    spec = config.sweep_spec()
    assert spec.axis == SweepAxis.gamma
    assert spec.strategies == [StrategyName.ddpg]
    for value in spec.values:
        assert apply_axis(config, spec.axis, value).env_config().gamma_discount == value


def test_missing_document(tmp_path):
    with pytest.raises(ConfigurationError, match='not found'):
        load_config_file(tmp_path / 'absent.toml')


def test_malformed_document(tmp_path):
    path = tmp_path / 'bad.toml'
    path.write_text('alpha = = 0.01\n')
    with pytest.raises(ConfigurationError):
        load_config_file(path)


def test_nested_tables_rejected(tmp_path):
    path = tmp_path / 'nested.toml'
    path.write_text('seed = 1\n\n[market]\nsigma = 0.2\n')
    with pytest.raises(ConfigurationError, match='nested'):
        load_config_file(path)


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / 'typo.toml'
    path.write_text('alpah = 0.01\n')
    with pytest.raises(ConfigurationError):
        read_experiment(str(path))


def test_read_experiment_defaults():
    assert read_experiment(None).maturity_days == 30


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv('HEDGE_WORKERS', '4')
    monkeypatch.setenv('HEDGE_HISTOGRAM_BINS', '40')
    settings = Settings()
    assert settings.workers == 4
    assert settings.histogram_bins == '40'


def test_settings_reject_zero_workers(monkeypatch):
    monkeypatch.setenv('HEDGE_WORKERS', '0')
    with pytest.raises(ValueError):
        Settings()


def test_with_overrides_skips_none():
    config = ExperimentConfig().with_overrides(seed=None, alpha=0.03)
    assert config.seed == 2023
    assert config.alpha == 0.03
