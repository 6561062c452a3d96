"""
Binary network checkpoints and strategy bundles.

A ``.net`` file is a magic line, an 8-byte little-endian header length, a JSON
header (architecture, array shapes, free-form extras) and the parameter and
buffer arrays as little-endian float64 in ``params() + buffers()`` order.
Strategy bundles are directories holding one ``.net`` per network plus a
``manifest.json``.
"""
import json
import logging
import struct
from pathlib import Path

import numpy as np

from src.exceptions import CheckpointError, UsageError
from src.schemas import DdpgConfig, EnvConfig, StrategyName
from src.services.ddpg_agent import DdpgAgent
from src.services.deep_mvh import PolicyStack
from src.services.messages_templates import CHECKPOINT_CORRUPT, CHECKPOINT_NOT_FOUND, PATH_NOT_WRITABLE, \
    UNKNOWN_STRATEGY
from src.services.neural import DenseNet

logger = logging.getLogger(__name__)

MAGIC = b'HEDGELAB-NET v1\n'
MANIFEST = 'manifest.json'
DDPG_NETS = ('actor', 'critic', 'actor_target', 'critic_target')


def save_net(net: DenseNet, path: str | Path, extra: dict | None = None) -> Path:
    """
    The save_net function writes one network to a self-describing binary file.

    :param net: DenseNet: Network to persist
    :param path: str | Path: Destination file
    :param extra: dict | None: JSON-serializable metadata stored in the header
    :return: The written path
    """
    path = Path(path)
    arrays = net.params() + net.buffers()
    header = json.dumps({'architecture': net.architecture(), 'shapes': [list(a.shape) for a in arrays],
                         'extra': extra or {}}, sort_keys=True).encode('utf-8')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('wb') as f:
            f.write(MAGIC)
            f.write(struct.pack('<Q', len(header)))
            f.write(header)
            for array in arrays:
                f.write(np.ascontiguousarray(array, dtype='<f8').tobytes())
    except OSError as err:
        raise UsageError(PATH_NOT_WRITABLE.format(path=path, reason=err)) from err
    return path


def load_net(path: str | Path) -> tuple[DenseNet, dict]:
    """
    The load_net function restores a network saved by save_net, bit for bit.

    :param path: str | Path: Checkpoint file
    :return: The network and the header extras
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(CHECKPOINT_NOT_FOUND.format(path=path))
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(CHECKPOINT_CORRUPT.format(path=path, reason='bad magic'))
    offset = len(MAGIC)
    try:
        (size,) = struct.unpack_from('<Q', data, offset)
        offset += 8
        header = json.loads(data[offset:offset + size].decode('utf-8'))
        offset += size
        net = DenseNet.from_architecture(header['architecture'])
    except (struct.error, ValueError, KeyError) as err:
        raise CheckpointError(CHECKPOINT_CORRUPT.format(path=path, reason=err)) from err
    arrays = net.params() + net.buffers()
    if [list(a.shape) for a in arrays] != header['shapes']:
        raise CheckpointError(CHECKPOINT_CORRUPT.format(path=path, reason='shapes disagree with architecture'))
    for array in arrays:
        n_bytes = array.size * 8
        if offset + n_bytes > len(data):
            raise CheckpointError(CHECKPOINT_CORRUPT.format(path=path, reason='truncated'))
        array[...] = np.frombuffer(data, dtype='<f8', count=array.size, offset=offset).reshape(array.shape)
        offset += n_bytes
    if offset != len(data):
        raise CheckpointError(CHECKPOINT_CORRUPT.format(path=path, reason='trailing bytes'))
    return net, header['extra']


def _write_manifest(directory: Path, manifest: dict) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as err:
        raise UsageError(PATH_NOT_WRITABLE.format(path=directory, reason=err)) from err


def _read_manifest(directory: Path) -> dict:
    path = directory / MANIFEST
    if not path.is_file():
        raise CheckpointError(CHECKPOINT_NOT_FOUND.format(path=path))
    try:
        return json.loads(path.read_text())
    except ValueError as err:
        raise CheckpointError(CHECKPOINT_CORRUPT.format(path=path, reason=err)) from err


def save_stack(stack: PolicyStack, directory: str | Path) -> Path:
    directory = Path(directory)
    files = []
    for step, net in enumerate(stack.nets):
        name = f'step_{step:03d}.net'
        save_net(net, directory / name, extra={'step': step})
        files.append(name)
    _write_manifest(directory, {
        'kind': StrategyName.deep_mvh.value,
        'env': json.loads(stack.env.json()),
        'parametrization': stack.parametrization.value,
        'dt_scale': stack.dt_scale,
        'output_scale': stack.output_scale,
        'files': files,
    })
    logger.info("saved deep-MVH stack (%d nets) to %s", len(files), directory)
    return directory


def load_stack(directory: str | Path) -> PolicyStack:
    directory = Path(directory)
    manifest = _read_manifest(directory)
    env = EnvConfig.parse_obj(manifest['env'])
    nets = [load_net(directory / name)[0] for name in manifest['files']]
    return PolicyStack(env, nets, manifest['parametrization'], manifest['dt_scale'], manifest['output_scale'])


def save_ddpg(agent: DdpgAgent, directory: str | Path) -> Path:
    directory = Path(directory)
    for name in DDPG_NETS:
        save_net(getattr(agent, name), directory / f'{name}.net')
    _write_manifest(directory, {
        'kind': StrategyName.ddpg.value,
        'env': json.loads(agent.env.json()),
        'config': json.loads(agent.config.json()),
        'files': [f'{name}.net' for name in DDPG_NETS],
    })
    logger.info("saved DDPG agent to %s", directory)
    return directory


def load_ddpg(directory: str | Path) -> DdpgAgent:
    directory = Path(directory)
    manifest = _read_manifest(directory)
    agent = DdpgAgent(DdpgConfig.parse_obj(manifest['config']), EnvConfig.parse_obj(manifest['env']),
                      np.random.default_rng(0))
    for name in DDPG_NETS:
        setattr(agent, name, load_net(directory / f'{name}.net')[0])
    return agent


def save_strategy(strategy, directory: str | Path) -> Path:
    if isinstance(strategy, PolicyStack):
        return save_stack(strategy, directory)
    if isinstance(strategy, DdpgAgent):
        return save_ddpg(strategy, directory)
    raise UsageError(UNKNOWN_STRATEGY.format(name=type(strategy).__name__))


def load_strategy(directory: str | Path):
    """
    The load_strategy function restores whichever agent a bundle directory holds.

    :param directory: str | Path: Bundle written by save_stack or save_ddpg
    :return: A PolicyStack or a DdpgAgent
    """
    kind = _read_manifest(Path(directory)).get('kind')
    if kind == StrategyName.deep_mvh.value:
        return load_stack(directory)
    if kind == StrategyName.ddpg.value:
        return load_ddpg(directory)
    raise CheckpointError(CHECKPOINT_CORRUPT.format(path=directory, reason=f'unknown kind {kind}'))
