"""Forward/backward passes, SGD updates and evaluation."""

from dataclasses import dataclass

import numpy as np

from ..data import BatchStream
from ..exceptions import NumericError, ShapeError, StateError, UsageError
from .im2col import col2im, im2col


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    max_iters: int = 1000
    seed: int = 0
    momentum: float = 0.0
    weight_decay: float = 0.0
    # "inv" decay: lr * (1 + lr_gamma * iteration) ** -lr_power; 0 keeps lr constant
    lr_gamma: float = 0.0
    lr_power: float = 0.75

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise UsageError("momentum must lie in [0, 1)")
        if self.max_iters < 0 or self.weight_decay < 0 or self.lr_gamma < 0:
            raise UsageError("max_iters, weight_decay and lr_gamma must be non-negative")

    def lr_at(self, iteration):
        if self.lr_gamma == 0:
            return self.learning_rate
        return self.learning_rate * (1.0 + self.lr_gamma * iteration) ** (-self.lr_power)


@dataclass
class Activations:
    inputs: list
    caches: list
    logits: np.ndarray
    probs: np.ndarray
    signature: tuple


def _linear_forward(layer, x2d):
    if layer.factored:
        h = x2d @ layer.factors.U
        return h @ layer.factors.V.T + layer.bias, h
    return x2d @ layer.weight + layer.bias, None


def _linear_backward(layer, x2d, h, dout):
    grads = {"b": dout.sum(axis=0)}
    if layer.factored:
        V = layer.factors.V
        grads["V"] = dout.T @ h
        dh = dout @ V
        grads["U"] = x2d.T @ dh
        dx = dh @ layer.factors.U.T
    else:
        grads["W"] = x2d.T @ dout
        dx = dout @ layer.weight.T
    return grads, dx


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(net, X):
    """Run a batch through every layer, keeping what backward needs."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != net.input_shape:
        raise ShapeError(f"batch of shape {X.shape[1:]} does not match network input {net.input_shape}")
    B = X.shape[0]
    inputs, caches = [], []
    x = X
    logits = None
    for layer in net.layers:
        inputs.append(x)
        if layer.kind == "conv":
            cols = im2col(x, layer.kernel)
            out, h = _linear_forward(layer, cols)
            F, OH, OW = layer.output_shape
            x = out.reshape(B, OH, OW, F).transpose(0, 3, 1, 2)
            caches.append((cols, h))
        elif layer.kind == "fc":
            x2d = x.reshape(B, -1)
            x, h = _linear_forward(layer, x2d)
            caches.append((x2d, h))
        elif layer.kind == "pool":
            k = layer.kernel[0]
            C, OH, OW = layer.output_shape
            win = x.reshape(B, C, OH, k, OW, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, OH, OW, k * k)
            arg = win.argmax(axis=-1)
            x = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
            caches.append(arg)
        elif layer.kind == "relu":
            caches.append(x > 0)
            x = np.maximum(x, 0.0)
        else:
            logits = x
            caches.append(None)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite activations in forward pass")
    probs = softmax(logits)
    return Activations(inputs, caches, logits, probs, net.signature())


def loss_from(acts, y):
    y = np.asarray(y)
    p = acts.probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def backward(net, acts, y):
    """Gradients of mean softmax cross-entropy, keyed ``{layer name: {param key: grad}}``."""
    if acts.signature != net.signature():
        raise StateError("activations were computed for a different network state")
    y = np.asarray(y)
    B = len(y)
    if acts.probs.shape[0] != B:
        raise ShapeError("targets and activations differ in batch size")
    grads = {}
    d = acts.probs.copy()
    d[np.arange(B), y] -= 1.0
    d /= B
    for layer, x, cache in zip(reversed(net.layers), reversed(acts.inputs), reversed(acts.caches)):
        if layer.kind == "softmax-xent":
            continue
        if layer.kind == "relu":
            d = d * cache
        elif layer.kind == "pool":
            k = layer.kernel[0]
            C, OH, OW = layer.output_shape
            spread = np.zeros((B, C, OH, OW, k * k))
            np.put_along_axis(spread, cache[..., None], d[..., None], axis=-1)
            d = spread.reshape(B, C, OH, OW, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        elif layer.kind == "fc":
            x2d, h = cache
            g, dx = _linear_backward(layer, x2d, h, d)
            grads[layer.name] = g
            d = dx.reshape(x.shape)
        elif layer.kind == "conv":
            cols, h = cache
            F, OH, OW = layer.output_shape
            dout = d.transpose(0, 2, 3, 1).reshape(B * OH * OW, F)
            g, dcols = _linear_backward(layer, cols, h, dout)
            grads[layer.name] = g
            # the first layer's input gradient is never used
            d = col2im(dcols, x.shape, layer.kernel) if layer is not net.layers[0] else None
    return grads


def loss_and_grads(net, X, y):
    acts = forward(net, X)
    return loss_from(acts, y), backward(net, acts, y), acts


def apply_masks(net):
    for layer in net.weighted_layers():
        for key, value in layer.params().items():
            mask = layer.param_mask(key)
            if mask is not None:
                value[mask] = 0.0


def sgd_step(net, grads, cfg, extra=None):
    """One in-place update ``w <- w - lr * (grad + extra)`` on every parameter.

    ``extra`` has the same nesting as ``grads`` and carries additional
    per-weight gradient terms (the group-Lasso addend). Momentum acts on
    the combined gradient. Masked weights are pinned to zero afterwards.
    """
    lr = cfg.lr_at(net.iteration)
    for layer in net.weighted_layers():
        lgrads = grads.get(layer.name)
        if lgrads is None:
            continue
        lextra = (extra or {}).get(layer.name, {})
        for key, value in layer.params().items():
            g = lgrads[key]
            if g.shape != value.shape:
                raise ShapeError(f"{layer.name}.{key}: gradient {g.shape} vs parameter {value.shape}")
            if key in lextra:
                g = g + lextra[key]
            if cfg.weight_decay and key != "b":
                g = g + cfg.weight_decay * value
            if cfg.momentum:
                vkey = (layer.name, key)
                vel = net.velocity.get(vkey)
                if vel is None or vel.shape != value.shape:
                    vel = np.zeros_like(value)
                vel = cfg.momentum * vel + g
                net.velocity[vkey] = vel
                g = vel
            value -= lr * g
            mask = layer.param_mask(key)
            if mask is not None:
                value[mask] = 0.0
            if not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite update in {layer.name}.{key}")
    return net


def train(net, dataset, cfg, iterations=None, extra_grad=None, callback=None):
    """Run ``iterations`` SGD steps (default ``cfg.max_iters``) from ``net.iteration``.

    ``extra_grad(net)`` returns additional gradient terms for :func:`sgd_step`.
    ``callback(net, loss)`` runs after every step.
    """
    stream = BatchStream(dataset, cfg.batch_size, cfg.seed)
    n = cfg.max_iters if iterations is None else iterations
    for _ in range(n):
        X, y = stream(net.iteration)
        loss, grads, _ = loss_and_grads(net, X, y)
        if not np.isfinite(loss):
            raise NumericError(f"loss diverged at iteration {net.iteration}")
        extra = extra_grad(net) if extra_grad is not None else None
        sgd_step(net, grads, cfg, extra)
        net.iteration += 1
        if callback is not None:
            callback(net, loss)
    return net


def predict_proba(net, X, batch_size=250):
    X = np.asarray(X, dtype=np.float64)
    return np.concatenate([forward(net, X[i:i + batch_size]).probs for i in range(0, len(X), batch_size)])


def predict(net, X, batch_size=250):
    return predict_proba(net, X, batch_size).argmax(axis=1)


def evaluate(net, dataset, batch_size=250):
    """Fraction of samples whose argmax prediction equals the label."""
    if len(dataset) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(net, dataset.images, batch_size) == dataset.labels))
