"""Matrix-backed layers and the Network container.

Every weighted layer (``conv`` or ``fc``) stores its weights as a
(fan-in x fan-out) matrix: one column per filter or output neuron. A
layer may instead carry a :class:`~xbarcompress.lra.LowRankPair`, in which
case the input is multiplied by ``U`` and then by ``V.T``.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ShapeError, UsageError
from .im2col import conv_output_size

WEIGHTED = ("conv", "fc")
KINDS = ("conv", "fc", "pool", "relu", "softmax-xent")


@dataclass(eq=False)
class Layer:
    name: str
    kind: str
    input_shape: tuple
    output_shape: tuple
    kernel: tuple = None
    weight: np.ndarray = None
    bias: np.ndarray = None
    factors: object = None
    # param key ("W", "U" or "V") -> DeletionMask, stored in crossbar orientation
    masks: dict = field(default_factory=dict)

    @property
    def weighted(self):
        return self.kind in WEIGHTED

    @property
    def factored(self):
        return self.factors is not None

    @property
    def fan_in(self):
        return int(np.prod(self.input_shape)) if self.kind == "fc" else self.kernel[0] * self.kernel[1] * self.input_shape[0]

    @property
    def fan_out(self):
        return self.output_shape[0]

    def params(self):
        """Trainable arrays keyed by "W" or "U"/"V", plus "b"."""
        out = {}
        if self.factored:
            out["U"] = self.factors.U
            out["V"] = self.factors.V
        elif self.weight is not None:
            out["W"] = self.weight
        if self.bias is not None:
            out["b"] = self.bias
        return out

    def effective_weight(self):
        if self.factored:
            return self.factors.U @ self.factors.V.T
        return self.weight

    def crossbar_arrays(self):
        """(array name, param key, matrix as mapped onto crossbars).

        ``U`` (fan-in x K) and the dense ``W`` are mapped as stored. The
        second crossbar of a factored layer takes K inputs and drives
        fan-out outputs, so it implements ``V.T``.
        """
        if not self.weighted:
            return []
        if self.factored:
            return [(f"{self.name}_u", "U", self.factors.U), (f"{self.name}_v", "V", self.factors.V.T)]
        return [(self.name, "W", self.weight)]

    def param_mask(self, key):
        """Boolean deleted-weight mask in the parameter's own orientation, or None."""
        mask = self.masks.get(key)
        if mask is None:
            return None
        return mask.deleted.T if key == "V" else mask.deleted

    def signature(self):
        return tuple((k, v.shape) for k, v in self.params().items())


class Network:
    """Ordered list of layers ending in a softmax cross-entropy layer."""

    def __init__(self, layers, input_shape, n_classes):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.n_classes = int(n_classes)
        self.iteration = 0
        self.velocity = {}
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise UsageError(f"duplicate layer names in {names}")
        if not self.layers or self.layers[-1].kind != "softmax-xent":
            raise UsageError("the final layer must be softmax-xent")

    def __repr__(self):
        parts = ", ".join(f"{l.name}:{l.kind}" for l in self.layers)
        return f"Network([{parts}], iteration={self.iteration})"

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise UsageError(f"no layer named {name!r}")

    def weighted_layers(self):
        return [layer for layer in self.layers if layer.weighted]

    def classifier_name(self):
        return self.weighted_layers()[-1].name

    def signature(self):
        return tuple((layer.name, layer.signature()) for layer in self.layers)

    def ranks(self):
        return {l.name: (l.factors.rank if l.factored else min(l.weight.shape)) for l in self.weighted_layers()}

    def copy(self):
        return copy.deepcopy(self)


def parse_architecture(text):
    """Parse ``"conv:20:5,pool:2,fc:500,relu,fc:10"`` into layer tuples.

    ``conv:F:k[:s]`` is a k x k convolution with F filters, ``pool:k`` a
    non-overlapping k x k max pool, ``fc:M`` a fully connected layer.
    """
    spec = []
    for token in text.replace(" ", "").split(","):
        if not token:
            continue
        kind, *args = token.split(":")
        args = [int(a) for a in args]
        if kind == "conv":
            filters, k = args[:2]
            spec.append(("conv", filters, k, args[2] if len(args) > 2 else 1))
        elif kind == "pool":
            spec.append(("pool", args[0]))
        elif kind == "fc":
            spec.append(("fc", args[0]))
        elif kind == "relu":
            spec.append(("relu",))
        else:
            raise UsageError(f"unknown layer token {token!r}")
    return spec


LENET = "conv:20:5,pool:2,conv:50:5,pool:2,fc:500,relu,fc:10"


def build_network(architecture, input_shape, n_classes, seed=0):
    """Instantiate layers with Xavier-uniform weights and zero biases.

    ``architecture`` is a string for :func:`parse_architecture` or an
    already parsed list. The final ``fc`` must have ``n_classes`` outputs.
    """
    if isinstance(architecture, str):
        architecture = parse_architecture(architecture)
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    counts = {}
    layers = []

    def name_for(kind):
        counts[kind] = counts.get(kind, 0) + 1
        return f"{kind}{counts[kind]}"

    for entry in architecture:
        kind = entry[0]
        if kind == "conv":
            _, filters, k, stride = entry
            if len(shape) != 3:
                raise ShapeError(f"conv needs a (C, H, W) input, got {shape}")
            C, H, W = shape
            out = (filters, conv_output_size(H, k, stride), conv_output_size(W, k, stride))
            layer = Layer(name_for("conv"), "conv", shape, out, kernel=(k, k, stride))
        elif kind == "pool":
            k = entry[1]
            C, H, W = shape
            out = (C, conv_output_size(H, k, k), conv_output_size(W, k, k))
            layer = Layer(name_for("pool"), "pool", shape, out, kernel=(k, k, k))
        elif kind == "fc":
            layer = Layer(name_for("fc"), "fc", shape, (entry[1],))
        elif kind == "relu":
            layer = Layer(name_for("relu"), "relu", shape, shape)
        else:
            raise UsageError(f"unknown layer kind {kind!r}")
        if layer.weighted:
            fan_in, fan_out = layer.fan_in, layer.fan_out
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layer.weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layer.bias = np.zeros(fan_out)
        layers.append(layer)
        shape = layer.output_shape
    if shape != (n_classes,):
        raise ShapeError(f"network output {shape} does not match {n_classes} classes")
    layers.append(Layer("loss", "softmax-xent", shape, shape))
    return Network(layers, input_shape, n_classes)


def lenet(seed=0):
    """LeNet variant: conv1 25x20, conv2 500x50, fc1 800x500, fc2 500x10."""
    return build_network(LENET, (1, 28, 28), 10, seed=seed)


def mlp(sizes, seed=0):
    """Fully connected ReLU network; ``sizes`` = (inputs, hidden..., classes)."""
    arch = []
    for i, m in enumerate(sizes[1:]):
        arch.append(("fc", m))
        if i < len(sizes) - 2:
            arch.append(("relu",))
    return build_network(arch, (1, 1, sizes[0]), sizes[-1], seed=seed)
