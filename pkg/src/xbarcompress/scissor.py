"""Group connection deletion.

Weights of a crossbar-mapped matrix are grouped along the tile grid: a row
group is one matrix row inside one tile column (it shares a crossbar input
wire), a column group is one matrix column inside one tile row (it shares
an output wire). Group-Lasso training drives whole groups to zero; the
all-zero groups are then deleted together with their wires and the
remaining weights are fine-tuned under the deletion mask.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import fabric
from .data import Dataset
from .exceptions import UsageError
from .nn import TrainConfig, evaluate, train
from .nn import engine
from .validation import as_images

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class GroupStructure:
    N: int
    K: int
    P: int
    Q: int

    @property
    def grid(self):
        return (-(-self.N // self.P), -(-self.K // self.Q))

    @property
    def n_row_groups(self):
        return self.N * self.grid[1]

    @property
    def n_col_groups(self):
        return self.K * self.grid[0]

    @property
    def tiling(self):
        return fabric.CrossbarTiling(self.N, self.K, self.P, self.Q)

    def row_groups(self):
        """Member (row, col) index pairs of every row group, ordered by (row, tile column)."""
        out = []
        for i in range(self.N):
            for b in range(self.grid[1]):
                cols = np.arange(b * self.Q, min((b + 1) * self.Q, self.K))
                out.append((np.full(len(cols), i), cols))
        return out

    def col_groups(self):
        """Member (row, col) index pairs of every column group, ordered by (tile row, column)."""
        out = []
        for a in range(self.grid[0]):
            rows = np.arange(a * self.P, min((a + 1) * self.P, self.N))
            for j in range(self.K):
                out.append((rows, np.full(len(rows), j)))
        return out

    def _check(self, A):
        if A.shape != (self.N, self.K):
            raise UsageError(f"matrix {A.shape} does not match groups built for {(self.N, self.K)}")

    def row_reduce(self, A, ufunc):
        """``ufunc.reduce`` over each row group: (N, grid columns)."""
        self._check(A)
        gq = self.grid[1]
        pad = np.zeros((self.N, gq * self.Q), dtype=A.dtype)
        pad[:, :self.K] = A
        return ufunc.reduce(pad.reshape(self.N, gq, self.Q), axis=2)

    def col_reduce(self, A, ufunc):
        """``ufunc.reduce`` over each column group: (grid rows, K)."""
        self._check(A)
        gp = self.grid[0]
        pad = np.zeros((gp * self.P, self.K), dtype=A.dtype)
        pad[:self.N] = A
        return ufunc.reduce(pad.reshape(gp, self.P, self.K), axis=1)

    def row_norms(self, A):
        return np.sqrt(self.row_reduce(A * A, np.add))

    def col_norms(self, A):
        return np.sqrt(self.col_reduce(A * A, np.add))

    def expand_rows(self, values):
        """Broadcast per-row-group values back to an (N, K) array."""
        return np.repeat(values, self.Q, axis=1)[:, :self.K]

    def expand_cols(self, values):
        return np.repeat(values, self.P, axis=0)[:self.N]


def build_groups(N, K, P, Q):
    if min(N, K, P, Q) < 1:
        raise UsageError("N, K, P and Q must be >= 1")
    return GroupStructure(N, K, P, Q)


def groups_for(matrix_shape, max_dim=fabric.MAX_DIM):
    t = fabric.select_tiling(*matrix_shape, max_dim=max_dim)
    return GroupStructure(t.N, t.K, t.P, t.Q)


def group_lasso_penalty(W, groups, lam):
    """``lam * (sum of row-group norms + sum of column-group norms)``."""
    W = np.asarray(W, dtype=np.float64)
    return float(lam * (groups.row_norms(W).sum() + groups.col_norms(W).sum()))


def group_lasso_grad(W, groups, lam):
    """Per-weight ``lam * w / |row group| + lam * w / |column group|``; a term is 0 on a zero-norm group."""
    W = np.asarray(W, dtype=np.float64)
    out = np.zeros_like(W)
    for norms, expand in ((groups.row_norms(W), groups.expand_rows), (groups.col_norms(W), groups.expand_cols)):
        inv = np.zeros_like(norms)
        alive = norms >= NORM_FLOOR
        inv[alive] = 1.0 / norms[alive]
        out += lam * W * expand(inv)
    return out


@dataclass
class GroupLassoConfig:
    lam: float = 1e-3
    zero_threshold: float = 0.1
    iterations: int = 5000
    max_dim: int = fabric.MAX_DIM
    # "relative": threshold = zero_threshold * RMS of the matrix; "absolute": threshold = zero_threshold
    threshold_mode: str = "relative"

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError("lam must be >= 0")
        if not self.zero_threshold > 0:
            raise UsageError("zero_threshold must be > 0")
        if self.threshold_mode not in ("relative", "absolute"):
            raise UsageError(f"unknown threshold_mode {self.threshold_mode!r}")

    def threshold(self, A):
        if self.threshold_mode == "absolute":
            return self.zero_threshold
        return self.zero_threshold * float(np.sqrt(np.mean(A * A)))


@dataclass
class DeletionMask:
    """Deleted weights of one crossbar array, in crossbar orientation (inputs x outputs)."""

    deleted: np.ndarray
    tiling: fabric.CrossbarTiling = None
    row_groups: np.ndarray = None
    col_groups: np.ndarray = None

    @classmethod
    def from_groups(cls, groups, dead_rows, dead_cols):
        deleted = groups.expand_rows(dead_rows) | groups.expand_cols(dead_cols)
        return cls(deleted, groups.tiling, np.flatnonzero(dead_rows), np.flatnonzero(dead_cols))

    @property
    def n_deleted(self):
        return int(self.deleted.sum())


def eligible_arrays(net, max_dim=fabric.MAX_DIM):
    """``(layer, name, key, matrix)`` for crossbar arrays larger than one crossbar."""
    out = []
    for layer in net.weighted_layers():
        for name, key, matrix in layer.crossbar_arrays():
            if max(matrix.shape) > max_dim:
                out.append((layer, name, key, matrix))
    return out


def _orient(key, arr):
    return arr.T if key == "V" else arr


def net_penalty(net, cfg):
    return sum(group_lasso_penalty(M, groups_for(M.shape, cfg.max_dim), cfg.lam)
               for _, _, _, M in eligible_arrays(net, cfg.max_dim))


def net_lasso_grad(net, cfg):
    """Group-Lasso gradient addends keyed like :func:`~xbarcompress.nn.backward` output."""
    extra = {}
    for layer, _, key, M in eligible_arrays(net, cfg.max_dim):
        g = group_lasso_grad(M, groups_for(M.shape, cfg.max_dim), cfg.lam)
        extra.setdefault(layer.name, {})[key] = _orient(key, g)
    return extra


def zero_group_fractions(M, groups, tau):
    return (float(np.mean(groups.row_reduce(np.abs(M), np.maximum) < tau)),
            float(np.mean(groups.col_reduce(np.abs(M), np.maximum) < tau)))


@dataclass
class DeletionRecord:
    iteration: int
    layer: str
    row_fraction: float
    col_fraction: float
    accuracy: float = float("nan")


@dataclass
class DeletionTrace:
    records: list = field(default_factory=list)

    def series(self, layer, attr="row_fraction"):
        return [getattr(r, attr) for r in self.records if r.layer == layer]

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "layer", "zero_group_fraction_row", "zero_group_fraction_col", "accuracy"])
        for r in self.records:
            acc = "" if np.isnan(r.accuracy) else fabric.fmt6(r.accuracy)
            writer.writerow([r.iteration, r.layer, fabric.fmt6(r.row_fraction), fabric.fmt6(r.col_fraction), acc])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _log_fractions(net, cfg, trace, accuracy=float("nan")):
    for layer, name, key, M in eligible_arrays(net, cfg.max_dim):
        r, c = zero_group_fractions(M, groups_for(M.shape, cfg.max_dim), cfg.threshold(M))
        trace.records.append(DeletionRecord(net.iteration, name, r, c, accuracy))


def regularized_train(net, gl_cfg, train_cfg, data, trace_every=100, probe=None, iterations=None):
    """Train with the group-Lasso addend on every array larger than one crossbar.

    Every ``trace_every`` iterations (and after the last one) the fraction of
    row and column groups whose largest weight is under the zero threshold
    is recorded per array, with the accuracy on ``probe`` when given.
    Group norms are recomputed at every step.
    """
    trace = DeletionTrace()
    n = gl_cfg.iterations if iterations is None else iterations
    done = 0
    while done < n:
        chunk = min(trace_every, n - done)
        train(net, data, train_cfg, iterations=chunk, extra_grad=lambda m: net_lasso_grad(m, gl_cfg))
        done += chunk
        acc = evaluate(net, probe) if probe is not None else float("nan")
        _log_fractions(net, gl_cfg, trace, acc)
    return net, trace


def delete_groups(net, gl_cfg):
    """Zero and mask every group whose weights are all below the zero threshold.

    Thresholds are evaluated on the weights before anything is zeroed. Only
    arrays larger than one crossbar are considered. Existing masks are kept.
    """
    for layer, name, key, M in eligible_arrays(net, gl_cfg.max_dim):
        groups = groups_for(M.shape, gl_cfg.max_dim)
        tau = gl_cfg.threshold(M)
        absM = np.abs(M)
        dead_rows = groups.row_reduce(absM, np.maximum) < tau
        dead_cols = groups.col_reduce(absM, np.maximum) < tau
        old = layer.masks.get(key)
        if old is not None:
            dead_rows |= ~fabric.row_group_live(groups.tiling, old.deleted)
            dead_cols |= ~fabric.col_group_live(groups.tiling, old.deleted)
        mask = DeletionMask.from_groups(groups, dead_rows, dead_cols)
        if old is not None:
            mask.deleted |= old.deleted
        layer.masks[key] = mask
        # M is a view for "V"; writing through it zeroes the parameter
        M[mask.deleted] = 0.0
        log.info("%s: deleted %d/%d row groups, %d/%d column groups", name, dead_rows.sum(), dead_rows.size,
                 dead_cols.sum(), dead_cols.size)
    return net


def fine_tune(net, train_cfg, data, iterations=None):
    """Plain training; masked weights stay exactly zero through :func:`~xbarcompress.nn.sgd_step`."""
    return train(net, data, train_cfg, iterations=iterations)


class GroupConnectionDeleter(ClassifierMixin, BaseEstimator):
    """Group-Lasso training, deletion and fine-tuning as one estimator.

    ``network`` is a trained :class:`~xbarcompress.nn.Network` (typically
    rank-clipped) or a fitted estimator exposing ``network_``.
    """

    def __init__(self, network=None, lam=1e-3, zero_threshold=0.1, threshold_mode="relative", max_iter=5000,
                 fine_tune_iter=2000, max_dim=64, learning_rate=0.01, batch_size=64, momentum=0.9,
                 weight_decay=0.0, lr_gamma=0.0, lr_power=0.75, random_state=0):
        self.network = network
        self.lam = lam
        self.zero_threshold = zero_threshold
        self.threshold_mode = threshold_mode
        self.max_iter = max_iter
        self.fine_tune_iter = fine_tune_iter
        self.max_dim = max_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_gamma = lr_gamma
        self.lr_power = lr_power
        self.random_state = random_state

    def fit(self, X, y):
        base = getattr(self.network, "network_", self.network)
        if base is None:
            raise UsageError("GroupConnectionDeleter needs a trained network")
        net = base.copy()
        X = as_images(X, net.input_shape)
        classes = getattr(self.network, "classes_", np.arange(net.n_classes))
        data = Dataset(X, np.searchsorted(classes, np.asarray(y)), net.n_classes)
        gl = GroupLassoConfig(self.lam, self.zero_threshold, self.max_iter, self.max_dim, self.threshold_mode)
        cfg = TrainConfig(self.learning_rate, self.batch_size, self.max_iter, self.random_state or 0,
                          self.momentum, self.weight_decay, self.lr_gamma, self.lr_power)
        _, self.trace_ = regularized_train(net, gl, cfg, data)
        delete_groups(net, gl)
        fine_tune(net, cfg, data, self.fine_tune_iter)
        self.network_ = net
        self.classes_ = classes
        self.report_ = fabric.net_report(net, max_dim=self.max_dim)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return engine.predict_proba(self.network_, as_images(X, self.network_.input_shape))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
