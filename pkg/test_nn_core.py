import math

import numpy as np
import pytest

from errors import CheckpointError, ModelStateError, ParameterError, ShapeError
from nn_core import (
    LayerKind,
    LayerSpec,
    Mode,
    ParamStore,
    Sequential,
    adam_step,
    build_layer,
    cross_entropy,
    file_digest,
    load_checkpoint,
    numerical_gradient,
    relative_error,
    save_checkpoint,
    softmax,
)

RNG = np.random.default_rng(1234)


def _check_gradients(layer, store, x, mode=Mode.TRAIN, tol=1e-4):
    """Compare backward() against central differences of sum(forward(x) * R)."""
    out = layer.forward(x, mode)
    r = RNG.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x, mode) * r))

    store.zero_grad()
    layer.forward(x, mode)
    dx = layer.backward(r)
    assert relative_error(dx, numerical_gradient(loss, x, h=1e-5)) < tol
    for name, p in store.trainable().items():
        analytic = p.grad.copy()
        assert relative_error(analytic, numerical_gradient(loss, p.value, h=1e-5)) < tol, name


def _layer(kind, **kwargs):
    store = ParamStore(seed=0)
    return build_layer(LayerSpec(kind, **kwargs), store, "layer"), store


def test_relu_forward():
    layer, _ = _layer(LayerKind.RELU)
    np.testing.assert_array_equal(layer.forward(np.array([-1.0, 0.0, 2.0]), Mode.EVAL), [0.0, 0.0, 2.0])


def test_maxpool_forward():
    layer, _ = _layer(LayerKind.MAXPOOL1D, kernel=3, stride=2)
    out = layer.forward(np.array([[[1.0, 5.0, 2.0, 4.0, 3.0]]]), Mode.EVAL)
    np.testing.assert_array_equal(out, [[[5.0, 4.0]]])


def test_maxpool_routes_gradient_to_argmax():
    layer, _ = _layer(LayerKind.MAXPOOL1D, kernel=3, stride=2)
    layer.forward(np.array([[[1.0, 5.0, 2.0, 4.0, 3.0]]]), Mode.EVAL)
    np.testing.assert_array_equal(layer.backward(np.array([[[1.0, 10.0]]])), [[[0.0, 1.0, 0.0, 10.0, 0.0]]])


@pytest.mark.parametrize("stride", [1, 2])
def test_conv1d_gradients(stride):
    layer, store = _layer(LayerKind.CONV1D, in_features=2, out_features=3, kernel=3, stride=stride)
    _check_gradients(layer, store, RNG.standard_normal((2, 2, 10)))


def test_conv1d_output_length():
    layer, _ = _layer(LayerKind.CONV1D, in_features=1, out_features=4, kernel=3, stride=2)
    assert layer.forward(np.zeros((1, 1, 10)), Mode.EVAL).shape == (1, 4, 4)


@pytest.mark.parametrize("mode", [Mode.TRAIN, Mode.EVAL])
def test_batchnorm_gradients(mode):
    layer, store = _layer(LayerKind.BATCHNORM1D, in_features=3)
    store.params["layer.gamma"].value[...] = RNG.uniform(0.5, 1.5, 3)
    _check_gradients(layer, store, RNG.standard_normal((4, 3, 5)), mode)


def test_batchnorm_updates_running_stats_in_train_only():
    layer, store = _layer(LayerKind.BATCHNORM1D, in_features=2)
    x = RNG.normal(3.0, 2.0, (8, 2))
    layer.forward(x, Mode.EVAL)
    np.testing.assert_array_equal(store.params["layer.running_mean"].value, [0.0, 0.0])
    layer.forward(x, Mode.TRAIN)
    np.testing.assert_allclose(store.params["layer.running_mean"].value, 0.1 * x.mean(axis=0))
    assert store.parameter_count() == 4


def test_dense_gradients():
    layer, store = _layer(LayerKind.DENSE, in_features=5, out_features=3)
    _check_gradients(layer, store, RNG.standard_normal((4, 5)))


def test_dense_accepts_sequences():
    layer, store = _layer(LayerKind.DENSE, in_features=4, out_features=2)
    _check_gradients(layer, store, RNG.standard_normal((3, 6, 4)))


def test_tanh_gradients():
    layer, store = _layer(LayerKind.TANH)
    _check_gradients(layer, store, RNG.standard_normal((3, 4)))


def test_relu_gradients():
    layer, store = _layer(LayerKind.RELU)
    x = RNG.choice([-1.0, 1.0], (3, 4)) * (0.1 + np.abs(RNG.standard_normal((3, 4))))
    _check_gradients(layer, store, x)


def test_maxpool_gradients():
    layer, store = _layer(LayerKind.MAXPOOL1D, kernel=2, stride=2)
    x = RNG.permutation(24).reshape(2, 3, 4) * 0.1
    _check_gradients(layer, store, x.astype(float))


def test_softmax_gradients():
    layer, store = _layer(LayerKind.SOFTMAX)
    _check_gradients(layer, store, RNG.standard_normal((3, 7)))


def test_dropout():
    layer, _ = _layer(LayerKind.DROPOUT, p=0.5)
    x = RNG.standard_normal((50, 20))
    np.testing.assert_array_equal(layer.forward(x, Mode.EVAL), x)
    out = layer.forward(x, Mode.TRAIN)
    kept = out != 0
    np.testing.assert_allclose(out[kept], 2.0 * x[kept])
    np.testing.assert_array_equal(layer.backward(np.ones_like(x)), 2.0 * kept)

    identity, _ = _layer(LayerKind.DROPOUT, p=0.0)
    np.testing.assert_array_equal(identity.forward(x, Mode.TRAIN), x)


def test_backward_before_forward():
    layer, _ = _layer(LayerKind.DENSE, in_features=2, out_features=2)
    with pytest.raises(ModelStateError):
        layer.backward(np.zeros((1, 2)))


def test_shape_errors():
    dense, _ = _layer(LayerKind.DENSE, in_features=3, out_features=2)
    with pytest.raises(ShapeError):
        dense.forward(np.zeros((1, 4)), Mode.EVAL)
    conv, _ = _layer(LayerKind.CONV1D, in_features=2, out_features=2, kernel=3)
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((1, 3, 8)), Mode.EVAL)
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((1, 2, 2)), Mode.EVAL)


def test_layer_spec_validation():
    with pytest.raises(ParameterError):
        LayerSpec(LayerKind.DROPOUT, p=1.0)
    with pytest.raises(ParameterError):
        LayerSpec(LayerKind.CONV1D, in_features=1, out_features=1, kernel=0)
    with pytest.raises(ParameterError):
        LayerSpec(LayerKind.DENSE, in_features=0, out_features=3)


def test_sequential_gradients_and_names():
    store = ParamStore(seed=3)
    net = Sequential(
        [
            LayerSpec(LayerKind.CONV1D, in_features=1, out_features=2, kernel=3),
            LayerSpec(LayerKind.TANH),
            LayerSpec(LayerKind.FLATTEN),
            LayerSpec(LayerKind.DENSE, in_features=12, out_features=3),
        ],
        store,
        "net",
    )
    assert "net.0_conv1d.weight" in store.params
    assert "net.3_dense.bias" in store.params
    _check_gradients(net, store, RNG.standard_normal((2, 1, 8)))


def test_softmax_sums_to_one():
    probs = softmax(RNG.standard_normal((5, 7)) * 50)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(probs >= 0)


def test_cross_entropy_values():
    loss, _ = cross_entropy(np.zeros(7), 3)
    assert loss == pytest.approx(math.log(7), abs=1e-4)
    confident = np.full(7, -50.0)
    confident[2] = 50.0
    loss, _ = cross_entropy(confident, 2)
    assert loss < 1e-9


def test_cross_entropy_gradient():
    logits = RNG.standard_normal((4, 7))
    labels = np.array([0, 3, 6, 3])
    _, grad = cross_entropy(logits, labels)
    numeric = numerical_gradient(lambda: cross_entropy(logits, labels)[0], logits, h=1e-5)
    assert relative_error(grad, numeric) < 1e-6
    with pytest.raises(ShapeError):
        cross_entropy(logits, [0, 1])


def test_adam_zero_gradient_is_a_no_op():
    store = ParamStore(seed=0)
    p = store.add("w", np.array([1.0, -2.0]))
    adam_step(store, lr=0.1)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_minimizes_quadratic():
    store = ParamStore(seed=0)
    theta = store.add("theta", np.array([0.0]))
    for _ in range(500):
        store.zero_grad()
        theta.grad[...] = 2.0 * (theta.value - 3.0)
        adam_step(store, lr=0.05)
    assert abs(theta.value[0] - 3.0) < 0.01


def test_adam_skips_frozen_parameters():
    store = ParamStore(seed=0)
    frozen = store.add("stat", np.array([1.0]), trainable=False)
    frozen.grad[...] = 5.0
    adam_step(store, lr=0.1)
    assert frozen.value[0] == 1.0


def test_same_seed_same_init():
    a, b = ParamStore(seed=9), ParamStore(seed=9)
    np.testing.assert_array_equal(a.he_normal("w", (4, 4), 4).value, b.he_normal("w", (4, 4), 4).value)


def test_checkpoint_round_trip(tmp_path):
    tensors = {"a.weight": RNG.standard_normal((3, 2)), "a.bias": np.arange(3.0), "scalar": np.array(2.5)}
    metadata = {"variant": "full", "epochs": 3}
    digest = save_checkpoint(tmp_path / "m.afrg", tensors, metadata)
    assert digest == file_digest(tmp_path / "m.afrg")
    loaded_meta, loaded = load_checkpoint(tmp_path / "m.afrg")
    assert loaded_meta == metadata
    assert list(loaded) == list(tensors)
    for name, value in tensors.items():
        np.testing.assert_allclose(loaded[name], value.astype(np.float32))
    assert save_checkpoint(tmp_path / "again.afrg", tensors, metadata) == digest


def test_digest_of_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        file_digest(tmp_path / "missing.afrg")
    with pytest.raises(CheckpointError):
        file_digest(tmp_path)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.afrg")

    bad = tmp_path / "bad.afrg"
    bad.write_bytes(b"NOTAMODEL")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)

    good = tmp_path / "good.afrg"
    save_checkpoint(good, {"w": np.ones((10, 10))}, {})
    truncated = tmp_path / "truncated.afrg"
    truncated.write_bytes(good.read_bytes()[:-12])
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)


def test_load_state_dict_checks_shapes():
    store = ParamStore(seed=0)
    store.zeros("w", (2, 2))
    with pytest.raises(CheckpointError):
        store.load_state_dict({"w": np.zeros((3, 2))})
    with pytest.raises(CheckpointError):
        store.load_state_dict({})
