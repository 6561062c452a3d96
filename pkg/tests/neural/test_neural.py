import numpy as np
import pytest

from src.exceptions import ConfigurationError, UsageError
from src.services.neural import (Activation, AdamState, Dense, DenseNet, Mode, adam_step, backward,
                                 calibrate_batch_norm, forward, soft_update)


def scalar_forward(net: DenseNet, row: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass written one unit at a time."""
    values = list(row)
    for layer in net.layers:
        out = []
        for j in range(layer.n_out):
            total = layer.bias[j]
            for i, value in enumerate(values):
                total += value * layer.weights[i, j]
            if layer.bn is not None:
                bn = layer.bn
                total = bn.scale[j] * (total - bn.running_mean[j]) / np.sqrt(bn.running_var[j] + bn.eps) + bn.shift[j]
            if layer.activation == Activation.relu:
                total = max(total, 0.0)
            out.append(total)
        values = out
    return np.array(values)


def clean_net(hidden, batch_norm=False, n_in=4, n_out=2, batch=6, mode=Mode.eval):
    """A random net and input batch whose ReLU pre-activations all sit away from the kink."""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = DenseNet.build(n_in, hidden, n_out, rng, batch_norm=batch_norm)
        for layer in net.layers:
            layer.bias[...] = rng.normal(0.0, 0.1, layer.bias.shape)
        x = rng.normal(size=(batch, n_in))
        _, tape = forward(net.copy(), x, mode)
        relu_inputs = [cache.u for cache, layer in zip(tape.caches, net.layers) if layer.activation == Activation.relu]
        if all(np.abs(u).min() > 1e-3 for u in relu_inputs):
            return net, x, rng
    raise AssertionError('no kink-free draw')


def finite_difference(net: DenseNet, x: np.ndarray, weights: np.ndarray, mode: Mode, h: float = 1e-5):
    def loss():
        y, _ = forward(net, x, mode)
        return float((weights * y).sum())

    grads = []
    for param in net.params():
        grad = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            saved = param[index]
            param[index] = saved + h
            up = loss()
            param[index] = saved - h
            down = loss()
            param[index] = saved
            grad[index] = (up - down) / (2 * h)
        grads.append(grad)
    return grads


def test_identity_layer_passes_input_through():
    net = DenseNet([Dense(weights=np.eye(3), bias=np.zeros(3), activation=Activation.identity)])
    x = np.array([[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]])
    y, _ = forward(net, x)
    np.testing.assert_array_equal(y, x)


def test_zero_weights_give_relu_of_bias():
    bias = np.array([-1.0, 0.5, 2.0])
    net = DenseNet([Dense(weights=np.zeros((2, 3)), bias=bias, activation=Activation.relu)])
    y, _ = forward(net, np.ones((4, 2)))
    np.testing.assert_array_equal(y, np.tile([0.0, 0.5, 2.0], (4, 1)))


def test_forward_matches_scalar_evaluation():
    rng = np.random.default_rng(3)
    net = DenseNet.build(5, [10, 15, 10], 1, rng, batch_norm=True)
    for layer in net.layers:
        layer.bias[...] = rng.normal(0.0, 0.2, layer.bias.shape)
        if layer.bn is not None:
            layer.bn.running_mean[...] = rng.normal(size=layer.n_out)
            layer.bn.running_var[...] = rng.uniform(0.5, 2.0, layer.n_out)
    x = rng.normal(size=(7, 5))
    y, _ = forward(net, x, Mode.eval)
    for row, out in zip(x, y):
        np.testing.assert_allclose(out, scalar_forward(net, row), rtol=1e-12, atol=1e-12)


def test_forward_rejects_wrong_width():
    net = DenseNet.build(3, [4], 1, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        forward(net, np.ones((2, 4)))


def test_train_mode_dropout_needs_rng():
    net = DenseNet.build(3, [4], 1, np.random.default_rng(0), dropout=0.25)
    with pytest.raises(UsageError):
        forward(net, np.ones((2, 3)), Mode.train)


def test_constructor_checks_dimensions_and_dropout():
    with pytest.raises(ConfigurationError):
        DenseNet([Dense(np.zeros((2, 3)), np.zeros(3)), Dense(np.zeros((4, 1)), np.zeros(1))])
    with pytest.raises(ConfigurationError):
        DenseNet([Dense(np.zeros((2, 3)), np.zeros(3))], dropout=1.0)


def test_build_initialization_ranges():
    net = DenseNet.build(5, [10, 15], 1, np.random.default_rng(0))
    assert np.abs(net.layers[0].weights).max() <= np.sqrt(6 / 5)
    assert np.abs(net.layers[1].weights).max() <= np.sqrt(6 / 10)
    assert np.abs(net.layers[2].weights).max() <= np.sqrt(6 / 16)
    assert net.layers[-1].activation == Activation.identity
    assert all(not layer.bias.any() for layer in net.layers)


def test_identity_layer_input_gradient():
    weights = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]])
    net = DenseNet([Dense(weights=weights, bias=np.zeros(2), activation=Activation.identity)])
    _, tape = forward(net, np.ones((2, 3)))
    dy = np.array([[1.0, -1.0], [2.0, 0.5]])
    _, dx = backward(net, tape, dy)
    np.testing.assert_allclose(dx, dy @ weights.T)


def test_zero_loss_gradient_at_target():
    net = DenseNet.build(3, [], 2, np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(5, 3))
    y, tape = forward(net, x)
    grads, dx = backward(net, tape, y - y)
    assert all(not g.any() for g in grads)
    assert not dx.any()


def test_backward_consumes_tape():
    net = DenseNet.build(3, [4], 1, np.random.default_rng(0))
    _, tape = forward(net, np.ones((2, 3)))
    backward(net, tape, np.ones((2, 1)))
    with pytest.raises(UsageError):
        backward(net, tape, np.ones((2, 1)))


@pytest.mark.parametrize('hidden', [[5], [6, 4], [10, 15, 10], [3, 8, 4, 6]])
def test_parameter_gradients_match_finite_differences(hidden):
    net, x, rng = clean_net(hidden)
    weights = rng.normal(size=(x.shape[0], 2))
    _, tape = forward(net, x, Mode.eval)
    grads, _ = backward(net, tape, weights)
    for analytic, numeric in zip(grads, finite_difference(net, x, weights, Mode.eval)):
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_batch_norm_train_gradients_match_finite_differences():
    net, x, rng = clean_net([6, 5], batch_norm=True, batch=8, mode=Mode.train)
    weights = rng.normal(size=(x.shape[0], 2))
    _, tape = forward(net, x, Mode.train)
    grads, _ = backward(net, tape, weights)
    for analytic, numeric in zip(grads, finite_difference(net, x, weights, Mode.train)):
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_input_gradient_matches_finite_differences():
    net, x, rng = clean_net([8, 8])
    weights = rng.normal(size=(x.shape[0], 2))
    _, tape = forward(net, x)
    _, dx = backward(net, tape, weights)
    h = 1e-5
    numeric = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[index] += h
        down[index] -= h
        numeric[index] = ((weights * net(up)).sum() - (weights * net(down)).sum()) / (2 * h)
    np.testing.assert_allclose(dx, numeric, rtol=1e-5, atol=1e-7)


def test_batch_norm_uses_batch_statistics_in_train_mode():
    rng = np.random.default_rng(4)
    net = DenseNet.build(3, [2], 1, rng, batch_norm=True)
    bn = net.layers[0].bn
    bn.scale[...] = [2.0, 0.5]
    bn.shift[...] = [1.0, -1.0]
    _, tape = forward(net, rng.normal(0.0, 100.0, size=(64, 3)), Mode.train)
    normalized = tape.caches[0].u
    np.testing.assert_allclose(normalized.mean(axis=0), bn.shift, atol=1e-6)
    np.testing.assert_allclose(normalized.std(axis=0), bn.scale, atol=1e-6)
    assert np.all(bn.running_var > 0)
    assert np.any(bn.running_mean != 0)


def test_eval_mode_leaves_running_statistics():
    net = DenseNet.build(3, [4], 1, np.random.default_rng(0), batch_norm=True)
    before = [buffer.copy() for buffer in net.buffers()]
    forward(net, np.ones((5, 3)), Mode.eval)
    for saved, buffer in zip(before, net.buffers()):
        np.testing.assert_array_equal(saved, buffer)


def test_calibrated_eval_mode_normalizes_the_population():
    rng = np.random.default_rng(6)
    net = DenseNet.build(3, [4, 4], 1, rng, batch_norm=True, dropout=0.25)
    x = rng.normal(2.0, 5.0, size=(500, 3))
    calibrate_batch_norm(net, x)
    _, tape = forward(net, x, Mode.eval)
    for cache, layer in zip(tape.caches[:-1], net.layers):
        np.testing.assert_allclose(cache.u.mean(axis=0), layer.bn.shift, atol=1e-9)
        np.testing.assert_allclose(cache.u.std(axis=0, ddof=1), layer.bn.scale, rtol=1e-3)


def test_calibrate_constant_input_normalizes_to_shift():
    net = DenseNet.build(3, [4], 1, np.random.default_rng(7), batch_norm=True)
    calibrate_batch_norm(net, np.ones((10, 3)))
    np.testing.assert_allclose(net.layers[0].bn.running_var, 0.0, atol=1e-20)
    _, tape = forward(net, np.ones((2, 3)), Mode.eval)
    np.testing.assert_allclose(tape.caches[0].u, 0.0, atol=1e-6)


def test_calibrate_rejects_wrong_width():
    net = DenseNet.build(3, [4], 1, np.random.default_rng(0), batch_norm=True)
    with pytest.raises(ConfigurationError):
        calibrate_batch_norm(net, np.ones((4, 2)))


def test_inverted_dropout_expectation():
    rng = np.random.default_rng(5)
    net = DenseNet.build(4, [16], 1, rng, dropout=0.25)
    row = rng.normal(size=4)
    expected = float(net(row[None, :])[0, 0])
    samples, _ = forward(net, np.tile(row, (10_000, 1)), Mode.train, rng=rng)
    standard_error = samples.std(ddof=1) / np.sqrt(samples.shape[0])
    assert abs(samples.mean() - expected) < 4 * standard_error


def test_adam_zero_gradient_keeps_params():
    params = [np.array([1.0, -2.0])]
    state = AdamState.for_params(params, lr=1e-3)
    adam_step(state, params, [np.zeros(2)])
    np.testing.assert_array_equal(params[0], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_by_hand():
    params = [np.array([0.5])]
    state = AdamState.for_params(params, lr=1e-3)
    adam_step(state, params, [np.array([1.0])])
    m_hat = (0.1 * 1.0) / (1 - 0.9)
    v_hat = (0.001 * 1.0) / (1 - 0.999)
    assert params[0][0] == pytest.approx(0.5 - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8), rel=1e-14)
    assert 0.5 - params[0][0] == pytest.approx(1e-3, rel=1e-7)


def test_adam_symmetry_and_scale_invariance():
    grads = np.array([0.3, 0.3, -2.0, 5e-3])
    first = [np.zeros(4)]
    adam_step(AdamState.for_params(first, lr=1e-2), first, [grads])
    scaled = [np.zeros(4)]
    adam_step(AdamState.for_params(scaled, lr=1e-2), scaled, [grads * 37.0])
    assert first[0][0] == first[0][1]
    np.testing.assert_array_equal(np.sign(first[0]), -np.sign(grads))
    np.testing.assert_array_equal(np.sign(first[0]), np.sign(scaled[0]))


def test_adam_shape_mismatch():
    params = [np.zeros(3)]
    with pytest.raises(ConfigurationError):
        adam_step(AdamState.for_params(params, lr=1e-3), params, [np.zeros(2)])


def scalar_net(value: float) -> DenseNet:
    return DenseNet([Dense(weights=np.array([[value]]), bias=np.array([value]), activation=Activation.identity)])


@pytest.mark.parametrize('rho, expected', [(1.0, 2.0), (0.0, 4.0), (0.999, 2.002)])
def test_soft_update(rho, expected):
    target = soft_update(scalar_net(2.0), scalar_net(4.0), rho)
    assert target.layers[0].weights[0, 0] == pytest.approx(expected, rel=1e-14)
    assert target.layers[0].bias[0] == pytest.approx(expected, rel=1e-14)


def test_soft_update_rejects_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        soft_update(DenseNet.build(2, [3], 1, rng), DenseNet.build(2, [4], 1, rng), 0.5)
    with pytest.raises(ConfigurationError):
        soft_update(scalar_net(1.0), scalar_net(2.0), 1.5)


def test_copy_is_independent():
    net = DenseNet.build(3, [4], 1, np.random.default_rng(0), batch_norm=True)
    clone = net.copy()
    assert clone.architecture() == net.architecture()
    clone.layers[0].weights += 1.0
    assert not np.allclose(clone.layers[0].weights, net.layers[0].weights)
