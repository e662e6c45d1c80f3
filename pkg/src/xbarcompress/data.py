"""Dataset loading (MNIST IDX), synthetic generators and deterministic batching."""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, UsageError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    """Images of shape (count, channels, height, width) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise UsageError(f"images must be 4-D (count, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise UsageError("images and labels differ in count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise UsageError("labels outside [0, n_classes)")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(self.images[indices], self.labels[indices], self.n_classes, dict(self.meta))

    def head(self, n):
        return self.subset(np.arange(min(n, len(self))))


def _read_header(buf, magic, ndim, path):
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header", offset=len(buf))
    found = struct.unpack_from(">I", buf, 0)[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    return struct.unpack_from(f">{ndim}I", buf, 4), need


def load_idx(image_path, label_path):
    """Parse an IDX image/label file pair into a Dataset with pixels scaled to [0, 1]."""
    with open(image_path, "rb") as fh:
        ibuf = fh.read()
    with open(label_path, "rb") as fh:
        lbuf = fh.read()

    (count, rows, cols), off = _read_header(ibuf, IMAGE_MAGIC, 3, image_path)
    expected = off + count * rows * cols
    if len(ibuf) < expected:
        raise FormatError(f"{image_path}: truncated pixel data, expected {expected} bytes", offset=len(ibuf))
    (lcount,), loff = _read_header(lbuf, LABEL_MAGIC, 1, label_path)
    if len(lbuf) < loff + lcount:
        raise FormatError(f"{label_path}: truncated label data", offset=len(lbuf))
    if lcount != count:
        raise FormatError(f"count mismatch: {count} images vs {lcount} labels", offset=4)

    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=count * rows * cols, offset=off)
    images = pixels.reshape(count, 1, rows, cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=lcount, offset=loff).astype(np.int64)
    n_classes = int(labels.max()) + 1 if lcount else 0
    return Dataset(images, labels, max(n_classes, 10))


def load_mnist(directory, split="train"):
    image_name, label_name = MNIST_FILES[split]
    return load_idx(os.path.join(directory, image_name), os.path.join(directory, label_name))


def write_idx(images, labels, image_path, label_path):
    """Write uint8 images (count, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGE_MAGIC, count, rows, cols))
        fh.write(images.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">2I", LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def synthetic(seed, kind, n, n_features=8):
    """Deterministic toy datasets used by the property tests.

    ``separable-2d``
        Two classes split by a random line through the unit square, with a
        margin of 0.05 around it. Always linearly separable.
    ``noisy-half-relevant``
        ``n_features`` uniform inputs; the label depends on the first half
        only. ``meta["noise_features"]`` lists the irrelevant coordinates.
    ``exact-lowrank-task``
        Four-class labels produced by a rank-2 linear map of the inputs.
    """
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "separable-2d":
        angle = rng.uniform(0, np.pi)
        normal = np.array([np.cos(angle), np.sin(angle)])
        pts = []
        while sum(len(p) for p in pts) < n:
            cand = rng.uniform(0, 1, size=(2 * n, 2))
            dist = (cand - 0.5) @ normal
            pts.append(cand[np.abs(dist) > 0.05])
        X = np.concatenate(pts)[:n]
        y = ((X - 0.5) @ normal > 0).astype(np.int64)
        return Dataset(X.reshape(n, 1, 1, 2), y, 2, {"normal": normal})
    if kind == "noisy-half-relevant":
        d = n_features
        relevant = d // 2
        w = rng.standard_normal(relevant)
        X = rng.uniform(0, 1, size=(n, d))
        y = ((X[:, :relevant] - 0.5) @ w > 0).astype(np.int64)
        meta = {"noise_features": np.arange(relevant, d), "relevant_weights": w}
        return Dataset(X.reshape(n, 1, 1, d), y, 2, meta)
    if kind == "exact-lowrank-task":
        d = n_features
        A = rng.standard_normal((d, 2))
        B = rng.standard_normal((4, 2))
        X = rng.uniform(0, 1, size=(n, d))
        y = np.argmax((X - 0.5) @ A @ B.T, axis=1)
        return Dataset(X.reshape(n, 1, 1, d), y, 4, {"rank": 2})
    raise UsageError(f"unknown synthetic dataset kind {kind!r}")


def epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(dataset, batch_size, seed, epoch):
    """Index arrays for one epoch, shuffled by (seed, epoch); the last batch may be short."""
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    order = epoch_order(len(dataset), seed, epoch)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


class BatchStream:
    """Maps a global iteration counter to a mini-batch.

    Iteration ``i`` falls in epoch ``i // batches_per_epoch``, so resuming
    from a checkpoint at iteration ``i`` continues the same data stream.
    """

    def __init__(self, dataset, batch_size, seed):
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.per_epoch = -(-len(dataset) // batch_size)
        self._epoch = None
        self._batches = None

    def indices(self, iteration):
        epoch, k = divmod(iteration, self.per_epoch)
        if epoch != self._epoch:
            self._batches = batches(self.dataset, self.batch_size, self.seed, epoch)
            self._epoch = epoch
        return self._batches[k]

    def __call__(self, iteration):
        idx = self.indices(iteration)
        return self.dataset.images[idx], self.dataset.labels[idx]
