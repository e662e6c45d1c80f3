"""Rank clipping: low-rank re-factorization interleaved with training.

Every eligible layer is first factorized at full rank. Then, every ``step``
iterations, each layer's ``U`` is projected onto the smallest PCA subspace
whose tail energy stays within ``epsilon``; ``V`` absorbs the basis so the
layer keeps the form ``U @ V.T``. Training in between lets the network
recover from each small perturbation.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import lra
from .data import Dataset
from .exceptions import NumericError, UsageError
from .nn import TrainConfig, evaluate, train
from .nn import engine
from .validation import as_images, check_fraction

log = logging.getLogger(__name__)


@dataclass
class ClipConfig:
    epsilon: float = 0.03
    step: int = 500
    max_iters: int = 5000
    method: str = "pca"
    exclude: tuple = None  # None excludes the final classifier layer
    rebase: bool = False

    def __post_init__(self):
        check_fraction(self.epsilon, "epsilon")
        if self.step < 1 or self.max_iters < self.step:
            raise UsageError("need step >= 1 and max_iters >= step")
        if self.method not in ("pca", "svd"):
            raise UsageError(f"unknown LRA method {self.method!r}")

    def excluded(self, net):
        if self.exclude is None:
            return {net.classifier_name()}
        return set(self.exclude)


@dataclass
class ClipRecord:
    iteration: int
    layer: str
    old_rank: int
    rank: int
    error: float
    accuracy: float = float("nan")
    test_accuracy: float = float("nan")


@dataclass
class ClipTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def layers(self):
        return list(dict.fromkeys(r.layer for r in self.records))

    def rank_history(self, layer):
        return [r.rank for r in self.records if r.layer == layer]

    def final_ranks(self):
        return {layer: self.rank_history(layer)[-1] for layer in self.layers()}

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "layer", "rank", "e", "accuracy", "old_rank", "test_accuracy"])
        for r in self.records:
            writer.writerow([r.iteration, r.layer, r.rank, _fmt(r.error), _fmt(r.accuracy), r.old_rank, _fmt(r.test_accuracy)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x):
    return "" if x is None or np.isnan(x) else f"{x:#.6g}"


def factorize_net(net, method="pca", exclude=None):
    """Replace every eligible dense layer by its full-rank factor pair, in place.

    ``exclude`` defaults to the final classifier layer.
    """
    skip = {net.classifier_name()} if exclude is None else set(exclude)
    for layer in net.weighted_layers():
        if layer.name in skip or layer.factored:
            continue
        W = layer.weight
        K = W.shape[1] if method == "pca" else min(W.shape)
        layer.factors = lra.factorize(W, K, method)
        layer.weight = None
        layer.masks = {}
        _reset_velocity(net, layer.name)
    return net


def _reset_velocity(net, name):
    for key in [k for k in net.velocity if k[0] == name]:
        del net.velocity[key]


def _rebased(pair):
    # U V^T = (U R^T) Q^T with V = Q R, so V gets orthonormal columns
    Q, R = np.linalg.qr(pair.V)
    return lra.LowRankPair(pair.U @ R.T, Q)


def clip_layer(pair, epsilon, method="pca", rebase=False, return_error=False):
    """Project ``pair.U`` onto its minimal rank meeting ``epsilon``.

    Returns the input object unchanged when no rank can be removed (or the
    spectrum is all zero). Otherwise ``U <- U_hat`` and ``V <- V @ V_hat``.
    With ``rebase=True`` the columns of ``V`` are orthonormalized first, which
    makes ``epsilon`` bound the relative error of the whole product ``U @ V.T``.
    """
    work = _rebased(pair) if rebase else pair
    U = work.U
    spec = lra.svd_spectrum(U) if method == "svd" else lra.spectrum(U, "uncentered")
    if spec.eigenvalues.sum() <= 0:
        log.info("all-zero spectrum, clipping skipped")
        return (pair, 0.0) if return_error else pair
    K_hat = lra.min_rank(spec, epsilon)
    if K_hat >= pair.rank:
        err = lra.reconstruction_error(spec, pair.rank)
        return (pair, err) if return_error else pair
    if method == "svd":
        inner = lra.svd_factorize(U, K_hat)
    else:
        inner = lra.pca_factorize(U, K_hat, spec=spec)
    clipped = lra.LowRankPair(inner.U, work.V @ inner.V)
    err = lra.reconstruction_error(spec, K_hat)
    return (clipped, err) if return_error else clipped


def clip_net(net, cfg, exclude=None):
    """One clipping sweep over every factored layer; returns ``[(layer, old, new, e)]``."""
    events = []
    skip = cfg.excluded(net) if exclude is None else set(exclude)
    for layer in net.weighted_layers():
        if not layer.factored or layer.name in skip:
            continue
        old = layer.factors.rank
        new_pair, err = clip_layer(layer.factors, cfg.epsilon, cfg.method, cfg.rebase, return_error=True)
        if new_pair is not layer.factors:
            layer.factors = new_pair
            layer.masks = {}
            _reset_velocity(net, layer.name)
        events.append((layer.name, old, layer.factors.rank, err))
    return events


def rank_clip_train(net, clip_cfg, train_cfg, data, probe=None, test=None):
    """Alternate clipping sweeps with ``clip_cfg.step`` training iterations.

    The first sweep runs right after the full-rank factorization, then one
    after every ``step`` iterations while fewer than ``clip_cfg.max_iters``
    iterations have run. Every sweep is followed by training, so the budget
    always ends with recovery steps. ``probe`` (default: the first 2000
    training samples) and ``test`` give the accuracies logged per sweep.
    Modifies ``net`` in place and returns ``(net, ClipTrace)``.
    """
    skip = clip_cfg.excluded(net)
    if not any(l.factored for l in net.weighted_layers() if l.name not in skip):
        factorize_net(net, clip_cfg.method, skip)
    probe = data.head(2000) if probe is None else probe
    trace = ClipTrace()
    done = 0
    try:
        while done < clip_cfg.max_iters:
            events = clip_net(net, clip_cfg, skip)
            acc = evaluate(net, probe)
            test_acc = evaluate(net, test) if test is not None else float("nan")
            for name, old, new, err in events:
                trace.records.append(ClipRecord(net.iteration, name, old, new, err, acc, test_acc))
            log.info("iteration %d ranks %s accuracy %.4f", net.iteration, {e[0]: e[2] for e in events}, acc)
            n = min(clip_cfg.step, clip_cfg.max_iters - done)
            train(net, data, train_cfg, iterations=n)
            done += n
    except NumericError as exc:
        raise NumericError(str(exc), trace=trace) from exc
    return net, trace


class RankClipper(ClassifierMixin, BaseEstimator):
    """Rank clipping as an estimator wrapping a trained network.

    ``network`` is a :class:`~xbarcompress.nn.Network` or a fitted
    :class:`~xbarcompress.nn.estimator.NetworkClassifier`; it is copied, never
    modified. After ``fit`` the clipped copy is in ``network_`` and the
    per-check log in ``trace_``.
    """

    def __init__(self, network=None, epsilon=0.03, step=500, max_iter=5000, method="pca", exclude=None,
                 rebase=False, learning_rate=0.01, batch_size=64, momentum=0.9, weight_decay=0.0,
                 lr_gamma=0.0, lr_power=0.75, random_state=0):
        self.network = network
        self.epsilon = epsilon
        self.step = step
        self.max_iter = max_iter
        self.method = method
        self.exclude = exclude
        self.rebase = rebase
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_gamma = lr_gamma
        self.lr_power = lr_power
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(self.learning_rate, self.batch_size, self.max_iter, self.random_state or 0,
                           self.momentum, self.weight_decay, self.lr_gamma, self.lr_power)

    def fit(self, X, y):
        base = getattr(self.network, "network_", self.network)
        if base is None:
            raise UsageError("RankClipper needs a trained network")
        net = base.copy()
        X = as_images(X, net.input_shape)
        classes = getattr(self.network, "classes_", np.arange(net.n_classes))
        y = np.searchsorted(classes, np.asarray(y))
        cfg = ClipConfig(self.epsilon, self.step, self.max_iter, self.method,
                         None if self.exclude is None else tuple(self.exclude), self.rebase)
        self.network_, self.trace_ = rank_clip_train(net, cfg, self._train_config(), Dataset(X, y, net.n_classes))
        self.classes_ = classes
        self.ranks_ = self.network_.ranks()
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return engine.predict_proba(self.network_, as_images(X, self.network_.input_shape))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
