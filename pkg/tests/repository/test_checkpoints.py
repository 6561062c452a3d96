import json

import numpy as np
import pytest

from src.exceptions import CheckpointError, UsageError
from src.repository.checkpoints import MAGIC, load_net, load_strategy, save_net, save_strategy
from src.schemas import DdpgConfig, MvhTrainConfig, Parametrization
from src.services.analysis import evaluate
from src.services.ddpg_agent import DdpgAgent
from src.services.deep_mvh import PolicyStack
from src.services.hedging_env import DeltaHedge
from src.services.neural import DenseNet
from tests.conftest import make_env


@pytest.fixture()
def net(rng):
    net = DenseNet.build(4, [5, 3], 1, rng, batch_norm=True, dropout=0.25)
    for buffer in net.buffers():
        buffer[...] = rng.uniform(0.5, 2.0, size=buffer.shape)
    return net


@pytest.fixture()
def saved_net(net, tmp_path):
    return save_net(net, tmp_path / 'net.net', extra={'step': 7})


def test_net_round_trip_is_bit_exact(net, saved_net, rng):
    loaded, extra = load_net(saved_net)
    assert extra == {'step': 7}
    assert loaded.architecture() == net.architecture()
    for original, restored in zip(net.params() + net.buffers(), loaded.params() + loaded.buffers()):
        assert original.tobytes() == restored.tobytes()
    x = rng.normal(size=(16, 4))
    np.testing.assert_array_equal(loaded(x), net(x))


def test_load_net_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_net(tmp_path / 'absent.net')


def test_load_net_bad_magic(saved_net):
    data = saved_net.read_bytes()
    saved_net.write_bytes(b'X' + data[1:])
    with pytest.raises(CheckpointError, match='bad magic'):
        load_net(saved_net)


def test_load_net_truncated(saved_net):
    saved_net.write_bytes(saved_net.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match='truncated'):
        load_net(saved_net)


def test_load_net_trailing_bytes(saved_net):
    saved_net.write_bytes(saved_net.read_bytes() + b'\x00' * 8)
    with pytest.raises(CheckpointError, match='trailing'):
        load_net(saved_net)


def test_load_net_garbled_header(saved_net):
    saved_net.write_bytes(MAGIC + (5).to_bytes(8, 'little') + b'{nope')
    with pytest.raises(CheckpointError):
        load_net(saved_net)


@pytest.mark.parametrize('parametrization', [Parametrization.rate, Parametrization.direct])
def test_stack_bundle_round_trip(tmp_path, rng, parametrization):
    env = make_env(n_steps=4)
    config = MvhTrainConfig(hidden=[5], parametrization=parametrization, dt_scale=2.0)
    stack = PolicyStack.build(env, config, rng)
    save_strategy(stack, tmp_path / 'stack')
    loaded = load_strategy(tmp_path / 'stack')
    assert isinstance(loaded, PolicyStack)
    assert loaded.parametrization == parametrization
    assert loaded.dt_scale == 2.0
    assert loaded.output_scale == stack.output_scale
    assert loaded.env == env
    assert evaluate(loaded, env, 30, seed=3) == evaluate(stack, env, 30, seed=3)


def test_ddpg_bundle_round_trip(tmp_path, rng):
    env = make_env(n_steps=4)
    config = DdpgConfig(actor_hidden=[4], critic_hidden=[6], minibatch=4, buffer_capacity=16)
    agent = DdpgAgent(config, env, rng)
    save_strategy(agent, tmp_path / 'ddpg')
    loaded = load_strategy(tmp_path / 'ddpg')
    assert isinstance(loaded, DdpgAgent)
    assert loaded.config == config
    for name in ('actor', 'critic', 'actor_target', 'critic_target'):
        for original, restored in zip(getattr(agent, name).params(), getattr(loaded, name).params()):
            np.testing.assert_array_equal(original, restored)
    assert evaluate(loaded, env, 30, seed=3) == evaluate(agent, env, 30, seed=3)


def test_bundle_without_manifest(tmp_path):
    (tmp_path / 'empty').mkdir()
    with pytest.raises(CheckpointError):
        load_strategy(tmp_path / 'empty')


def test_bundle_of_unknown_kind(tmp_path):
    (tmp_path / 'manifest.json').write_text(json.dumps({'kind': 'oracle'}))
    with pytest.raises(CheckpointError, match='unknown kind'):
        load_strategy(tmp_path)


def test_delta_hedge_is_not_saved(tmp_path):
    with pytest.raises(UsageError):
        save_strategy(DeltaHedge(make_env()), tmp_path / 'delta')
