"""Minimal deterministic training engine with matrix-backed layers."""

from .engine import (
    Activations,
    TrainConfig,
    backward,
    evaluate,
    forward,
    loss_and_grads,
    predict,
    predict_proba,
    sgd_step,
    softmax,
    train,
)
from .estimator import NetworkClassifier
from .im2col import col2im, im2col
from .network import LENET, Layer, Network, build_network, lenet, mlp, parse_architecture

__all__ = [
    "Activations", "TrainConfig", "backward", "evaluate", "forward", "loss_and_grads",
    "predict", "predict_proba", "sgd_step", "softmax", "train", "NetworkClassifier", "col2im", "im2col",
    "LENET", "Layer", "Network", "build_network", "lenet", "mlp", "parse_architecture",
]
