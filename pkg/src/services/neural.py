"""
Feedforward networks with hand-written reverse-mode gradients.

A hidden layer computes ``relu(bn(x W + b))`` followed by inverted dropout;
the output layer is affine. Everything runs in float64. ``forward`` returns a
single-use ``GradientTape`` that ``backward`` consumes.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from src.exceptions import ConfigurationError, UsageError
from src.services.messages_templates import (ARCHITECTURE_MISMATCH, DIMENSION_MISMATCH, DROPOUT_NEEDS_RNG,
                                             INVALID_BLEND, INVALID_DROPOUT, SHAPE_MISMATCH, TAPE_REUSED)

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Mode(str, Enum):
    train = 'train'
    eval = 'eval'


class Activation(str, Enum):
    relu = 'relu'
    identity = 'identity'


@dataclass
class BatchNorm:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, width: int) -> 'BatchNorm':
        return cls(scale=np.ones(width), shift=np.zeros(width), running_mean=np.zeros(width),
                   running_var=np.ones(width))


@dataclass
class Dense:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.relu
    bn: Optional[BatchNorm] = None

    @property
    def n_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]


class DenseNet:
    def __init__(self, layers: List[Dense], dropout: float = 0.0):
        if not 0.0 <= dropout < 1.0:
            raise ConfigurationError(INVALID_DROPOUT.format(value=dropout))
        for before, after in zip(layers, layers[1:]):
            if before.n_out != after.n_in:
                raise ConfigurationError(DIMENSION_MISMATCH.format(got=before.n_out, expected=after.n_in))
        self.layers = layers
        self.dropout = dropout

    @classmethod
    def build(cls, n_in: int, hidden: Sequence[int], n_out: int, rng: np.random.Generator,
              batch_norm: bool = False, dropout: float = 0.0) -> 'DenseNet':
        """
        The build function initializes a network: He-uniform weights for ReLU layers, Xavier-uniform for
        the affine output layer, zero biases.

        :param n_in: int: Input width
        :param hidden: Sequence[int]: Hidden layer widths, may be empty (linear model)
        :param n_out: int: Output width
        :param rng: np.random.Generator: Initialization stream
        :param batch_norm: bool: Batch-normalize every hidden layer
        :param dropout: float: Inverted-dropout rate after every hidden layer
        :return: A fresh DenseNet
        """
        widths = [n_in, *hidden]
        layers = []
        for fan_in, fan_out in zip(widths, widths[1:]):
            limit = np.sqrt(6.0 / fan_in)
            layers.append(Dense(weights=rng.uniform(-limit, limit, (fan_in, fan_out)), bias=np.zeros(fan_out),
                                activation=Activation.relu, bn=BatchNorm.fresh(fan_out) if batch_norm else None))
        limit = np.sqrt(6.0 / (widths[-1] + n_out))
        layers.append(Dense(weights=rng.uniform(-limit, limit, (widths[-1], n_out)), bias=np.zeros(n_out),
                            activation=Activation.identity))
        return cls(layers, dropout=dropout)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weights, layer.bias])
            if layer.bn is not None:
                params.extend([layer.bn.scale, layer.bn.shift])
        return params

    def buffers(self) -> List[np.ndarray]:
        return [array for layer in self.layers if layer.bn is not None
                for array in (layer.bn.running_mean, layer.bn.running_var)]

    def architecture(self) -> dict:
        return {
            'widths': [self.n_inputs] + [layer.n_out for layer in self.layers],
            'activations': [layer.activation.value for layer in self.layers],
            'batch_norm': [layer.bn is not None for layer in self.layers],
            'dropout': self.dropout,
            'bn_momentum': BN_MOMENTUM,
            'bn_eps': BN_EPS,
        }

    @classmethod
    def from_architecture(cls, arch: dict) -> 'DenseNet':
        widths = arch['widths']
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            layers.append(Dense(weights=np.zeros((fan_in, fan_out)), bias=np.zeros(fan_out),
                                activation=Activation(arch['activations'][i]),
                                bn=BatchNorm.fresh(fan_out) if arch['batch_norm'][i] else None))
        return cls(layers, dropout=arch['dropout'])

    def copy(self) -> 'DenseNet':
        clone = DenseNet.from_architecture(self.architecture())
        for target, source in zip(clone.params() + clone.buffers(), self.params() + self.buffers()):
            target[...] = source
        return clone

    def __call__(self, x: np.ndarray) -> np.ndarray:
        y, _ = forward(self, x, Mode.eval)
        return y


@dataclass
class LayerCache:
    x: np.ndarray
    u: np.ndarray
    xhat: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None


@dataclass
class GradientTape:
    caches: List[LayerCache]
    mode: Mode
    consumed: bool = field(default=False)


def forward(net: DenseNet, x: np.ndarray, mode: Mode = Mode.eval,
            rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, GradientTape]:
    """
    The forward function evaluates the network on a batch and records what backward needs.
        Train mode normalizes with batch statistics (updating the running ones) and samples dropout
        masks from rng; eval mode uses running statistics and no dropout.

    :param net: DenseNet: Network to evaluate
    :param x: np.ndarray: (batch, n_inputs) input rows
    :param mode: Mode: train or eval
    :param rng: np.random.Generator | None: Dropout stream, required for train mode with dropout
    :return: The (batch, n_outputs) output and a fresh GradientTape
    """
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if h.shape[1] != net.n_inputs:
        raise ConfigurationError(DIMENSION_MISMATCH.format(got=h.shape[1], expected=net.n_inputs))
    train = mode == Mode.train
    if train and net.dropout > 0 and rng is None:
        raise UsageError(DROPOUT_NEEDS_RNG)
    caches = []
    for index, layer in enumerate(net.layers):
        cache = LayerCache(x=h, u=h @ layer.weights + layer.bias)
        bn = layer.bn
        if bn is not None:
            z = cache.u
            if train:
                mean, var = z.mean(axis=0), z.var(axis=0)
                count = z.shape[0]
                bn.running_mean[...] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean
                unbiased = var * count / (count - 1) if count > 1 else var
                bn.running_var[...] = (1 - bn.momentum) * bn.running_var + bn.momentum * unbiased
            else:
                mean, var = bn.running_mean, bn.running_var
            cache.inv_std = 1.0 / np.sqrt(var + bn.eps)
            cache.xhat = (z - mean) * cache.inv_std
            cache.u = bn.scale * cache.xhat + bn.shift
        h = np.maximum(cache.u, 0.0) if layer.activation == Activation.relu else cache.u
        hidden = index < len(net.layers) - 1
        if train and hidden and net.dropout > 0:
            cache.mask = (rng.random(h.shape) >= net.dropout) / (1.0 - net.dropout)
            h = h * cache.mask
        caches.append(cache)
    return h, GradientTape(caches=caches, mode=mode)


def backward(net: DenseNet, tape: GradientTape, dy: np.ndarray) -> tuple[List[np.ndarray], np.ndarray]:
    """
    The backward function back-propagates dy, the gradient of a scalar loss w.r.t. the network output.

    :param net: DenseNet: Network the tape was recorded on
    :param tape: GradientTape: Fresh tape from forward
    :param dy: np.ndarray: (batch, n_outputs) upstream gradient
    :return: Parameter gradients aligned with net.params() and the input gradient dx
    """
    if tape.consumed:
        raise UsageError(TAPE_REUSED)
    tape.consumed = True
    grad = np.atleast_2d(np.asarray(dy, dtype=float))
    per_layer = []
    for layer, cache in zip(reversed(net.layers), reversed(tape.caches)):
        if cache.mask is not None:
            grad = grad * cache.mask
        if layer.activation == Activation.relu:
            grad = grad * (cache.u > 0)
        bn_grads = []
        bn = layer.bn
        if bn is not None:
            bn_grads = [(grad * cache.xhat).sum(axis=0), grad.sum(axis=0)]
            dxhat = grad * bn.scale
            if tape.mode == Mode.train:
                count = dxhat.shape[0]
                grad = (cache.inv_std / count) * (count * dxhat - dxhat.sum(axis=0)
                                                  - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
            else:
                grad = dxhat * cache.inv_std
        per_layer.append([cache.x.T @ grad, grad.sum(axis=0), *bn_grads])
        grad = grad @ layer.weights.T
    grads = [g for layer_grads in reversed(per_layer) for g in layer_grads]
    return grads, grad


def calibrate_batch_norm(net: DenseNet, x: np.ndarray) -> DenseNet:
    """
    The calibrate_batch_norm function replaces every running mean and variance with the statistics of
    the dropout-free activations on x, layer by layer, so eval mode normalizes what eval mode sees.

    :param net: DenseNet: Network whose buffers are reset in place
    :param x: np.ndarray: (batch, n_inputs) population rows
    :return: The network
    """
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if h.shape[1] != net.n_inputs:
        raise ConfigurationError(DIMENSION_MISMATCH.format(got=h.shape[1], expected=net.n_inputs))
    for layer in net.layers:
        z = h @ layer.weights + layer.bias
        bn = layer.bn
        if bn is not None:
            bn.running_mean[...] = z.mean(axis=0)
            bn.running_var[...] = z.var(axis=0, ddof=1) if z.shape[0] > 1 else 0.0
            z = bn.scale * (z - bn.running_mean) / np.sqrt(bn.running_var + bn.eps) + bn.shift
        h = np.maximum(z, 0.0) if layer.activation == Activation.relu else z
    return net


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float, **kwargs) -> 'AdamState':
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], lr=lr, **kwargs)


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> tuple[Sequence[np.ndarray], AdamState]:
    """
    The adam_step function applies one bias-corrected ADAM update to params in place.

    :param state: AdamState: Moment accumulators and hyper-parameters
    :param params: Sequence[np.ndarray]: Parameters, updated in place
    :param grads: Sequence[np.ndarray]: Gradients of the loss being minimized
    :return: The updated params and state
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError(SHAPE_MISMATCH.format(left=len(params), right=len(grads)))
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ConfigurationError(SHAPE_MISMATCH.format(left=p.shape, right=g.shape))
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


def soft_update(target: DenseNet, source: DenseNet, rho: float) -> DenseNet:
    """
    The soft_update function blends source into target: p_t <- rho p_t + (1 - rho) p_s.

    :param target: DenseNet: Lagging network, updated in place
    :param source: DenseNet: Network being tracked
    :param rho: float: Weight kept on the target, in [0, 1]
    :return: The target network
    """
    if not 0.0 <= rho <= 1.0:
        raise ConfigurationError(INVALID_BLEND.format(value=rho))
    if target.architecture() != source.architecture():
        raise ConfigurationError(ARCHITECTURE_MISMATCH.format(left=target.architecture(),
                                                              right=source.architecture()))
    for p_t, p_s in zip(target.params() + target.buffers(), source.params() + source.buffers()):
        p_t[...] = rho * p_t + (1.0 - rho) * p_s
    return target
