import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from xbarcompress.data import Dataset, synthetic
from xbarcompress.exceptions import ShapeError, StateError, UsageError
from xbarcompress.lra import LowRankPair
from xbarcompress.nn import (NetworkClassifier, TrainConfig, build_network, col2im, evaluate, forward, im2col,
                             lenet, loss_and_grads, mlp, sgd_step, train)
from xbarcompress.nn.engine import loss_from
from xbarcompress.nn.network import parse_architecture


def conv_oracle(x, Wt, stride):
    """Direct nested-loop convolution; Wt has shape (F, C, kh, kw)."""
    B, C, H, W = x.shape
    F, _, kh, kw = Wt.shape
    oh, ow = (H - kh) // stride + 1, (W - kw) // stride + 1
    out = np.zeros((B, F, oh, ow))
    for b in range(B):
        for f in range(F):
            for i in range(oh):
                for j in range(ow):
                    patch = x[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, f, i, j] = np.sum(patch * Wt[f])
    return out


@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(0, 3),
       st.integers(0, 10_000))
def test_im2col_matmul_equals_direct_convolution(B, C, k, stride, extra, seed):
    rng = np.random.default_rng(seed)
    H = k + stride * extra
    x = rng.normal(size=(B, C, H, H))
    Wt = rng.normal(size=(3, C, k, k))
    cols = im2col(x, (k, k, stride))
    oh = (H - k) // stride + 1
    got = (cols @ Wt.reshape(3, -1).T).reshape(B, oh, oh, 3).transpose(0, 3, 1, 2)
    np.testing.assert_allclose(got, conv_oracle(x, Wt, stride), atol=1e-12)


@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 10_000))
def test_col2im_is_adjoint_of_im2col(k, stride, seed):
    rng = np.random.default_rng(seed)
    shape = (2, 2, k + 2 * stride, k + 2 * stride)
    x = rng.normal(size=shape)
    cols = im2col(x, (k, k, stride))
    y = rng.normal(size=cols.shape)
    assert np.isclose(np.sum(cols * y), np.sum(x * col2im(y, shape, (k, k, stride))))


def test_im2col_rejects_bad_input():
    with pytest.raises(ShapeError):
        im2col(np.zeros((3, 4, 4)), (2, 2, 1))
    with pytest.raises(ShapeError):
        im2col(np.zeros((1, 1, 5, 5)), (2, 2, 2))


def test_lenet_layer_shapes():
    net = lenet()
    shapes = {l.name: l.weight.shape for l in net.weighted_layers()}
    assert shapes == {"conv1": (25, 20), "conv2": (500, 50), "fc1": (800, 500), "fc2": (500, 10)}
    assert net.classifier_name() == "fc2"


def test_parse_architecture_rejects_unknown():
    assert parse_architecture("conv:4:3:2,pool:2,fc:5,relu") == [("conv", 4, 3, 2), ("pool", 2), ("fc", 5), ("relu",)]
    with pytest.raises(UsageError):
        parse_architecture("dropout:5")
    with pytest.raises(ShapeError):
        build_network("fc:4", (1, 1, 3), 10)


def _numeric_grad(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        hi = f()
        arr[idx] = old - eps
        lo = f()
        arr[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def _check_grads(net, X, y):
    loss, grads, _ = loss_and_grads(net, X, y)
    for layer in net.weighted_layers():
        for key, value in layer.params().items():
            num = _numeric_grad(lambda: loss_from(forward(net, X), y), value)
            np.testing.assert_allclose(grads[layer.name][key], num, rtol=1e-5, atol=1e-8)


def test_backprop_matches_finite_differences_on_conv_net(rng):
    net = build_network("conv:3:3,pool:2,conv:2:2,relu,fc:3", (2, 8, 8), 3, seed=1)
    for layer in net.weighted_layers():
        layer.bias = rng.normal(scale=0.1, size=layer.bias.shape)
    X = rng.normal(size=(4, 2, 8, 8))
    _check_grads(net, X, np.array([0, 1, 2, 1]))


def test_backprop_matches_finite_differences_on_factored_layers(rng):
    net = build_network("conv:4:3,pool:2,fc:6,relu,fc:3", (1, 6, 6), 3, seed=2)
    for name, k in (("conv1", 2), ("fc1", 3)):
        layer = net.layer(name)
        layer.factors = LowRankPair(rng.normal(size=(layer.fan_in, k)), rng.normal(size=(layer.fan_out, k)))
        layer.weight = None
    X = rng.normal(size=(3, 1, 6, 6))
    _check_grads(net, X, np.array([2, 0, 1]))


def test_sgd_step_arithmetic(rng):
    net = mlp((3, 2), seed=0)
    layer = net.layer("fc1")
    W0, b0 = layer.weight.copy(), layer.bias.copy()
    g = {"fc1": {"W": rng.normal(size=W0.shape), "b": rng.normal(size=2)}}
    extra = {"fc1": {"W": rng.normal(size=W0.shape)}}
    cfg = TrainConfig(learning_rate=0.1, momentum=0.5, weight_decay=0.01)
    sgd_step(net, g, cfg, extra)
    v1 = g["fc1"]["W"] + extra["fc1"]["W"] + 0.01 * W0
    W1 = W0 - 0.1 * v1
    np.testing.assert_allclose(layer.weight, W1, atol=1e-15)
    np.testing.assert_allclose(layer.bias, b0 - 0.1 * g["fc1"]["b"], atol=1e-15)
    sgd_step(net, g, cfg, extra)
    v2 = 0.5 * v1 + g["fc1"]["W"] + extra["fc1"]["W"] + 0.01 * W1
    np.testing.assert_allclose(layer.weight, W1 - 0.1 * v2, atol=1e-15)


def test_inv_learning_rate_schedule():
    cfg = TrainConfig(learning_rate=0.01, lr_gamma=1e-4, lr_power=0.75)
    assert cfg.lr_at(0) == 0.01
    assert np.isclose(cfg.lr_at(10_000), 0.01 * 2 ** -0.75)
    with pytest.raises(UsageError):
        TrainConfig(momentum=1.0)


def test_backward_rejects_stale_activations(rng):
    net = mlp((4, 3), seed=0)
    X, y = rng.normal(size=(2, 1, 1, 4)), np.array([0, 1])
    acts = forward(net, X)
    net.layer("fc1").factors = LowRankPair(np.ones((4, 1)), np.ones((3, 1)))
    with pytest.raises(StateError):
        from xbarcompress.nn import backward
        backward(net, acts, y)
    with pytest.raises(ShapeError):
        forward(net, np.zeros((2, 1, 1, 5)))


def test_training_is_deterministic_and_learns():
    data = synthetic(0, "separable-2d", 200)
    runs = []
    for _ in range(2):
        net = mlp((2, 8, 2), seed=3)
        train(net, data, TrainConfig(learning_rate=0.1, batch_size=20, max_iters=200, momentum=0.9))
        runs.append(net)
    np.testing.assert_array_equal(runs[0].layer("fc1").weight, runs[1].layer("fc1").weight)
    assert evaluate(runs[0], data) >= 0.95
    with pytest.raises(UsageError):
        evaluate(runs[0], Dataset(np.zeros((0, 1, 1, 2)), np.zeros(0, dtype=int), 2))


def test_network_classifier_estimator_api():
    data = synthetic(1, "separable-2d", 150)
    X, y = data.images.reshape(150, 2), np.where(data.labels == 1, "yes", "no")
    clf = NetworkClassifier(architecture="fc:2", learning_rate=0.1, batch_size=16, max_iter=300)
    assert clone(clf).get_params() == clf.get_params()
    clf.fit(X, y)
    assert set(clf.classes_) == {"no", "yes"}
    assert clf.score(X, y) >= 0.95
    assert clf.predict_proba(X).shape == (150, 2)
