"""Run configuration read from an INI-style file.

Every tunable has an explicit ``section.key``, e.g. ``clip.epsilon``,
``clip.step``, ``train.max_iters``, ``prune.lambda``,
``prune.zero_threshold``, ``fabric.max_dim`` and ``fabric.alpha``.
Stage sections ``[clip]`` and ``[prune]`` may override any training
key (``learning_rate``, ``momentum``, ...) for their own training phase.
"""

import configparser
import os
from dataclasses import dataclass, field, replace

from .clipper import ClipConfig
from .exceptions import UsageError
from .fabric import AreaModel
from .nn import TrainConfig, build_network
from .nn.network import LENET
from .scissor import GroupLassoConfig

STAGES = ("train", "clip", "prune", "map", "report")
_TRAIN_KEYS = {
    "learning_rate": float, "batch_size": int, "max_iters": int, "seed": int, "momentum": float,
    "weight_decay": float, "lr_gamma": float, "lr_power": float,
}


@dataclass
class DataPaths:
    mnist_dir: str = None
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    train_subset: int = 0
    test_subset: int = 0


@dataclass
class RunConfig:
    architecture: str = LENET
    input_shape: tuple = (1, 28, 28)
    n_classes: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    log_every: int = 100
    clip: ClipConfig = field(default_factory=ClipConfig)
    clip_train: TrainConfig = field(default_factory=TrainConfig)
    prune: GroupLassoConfig = field(default_factory=GroupLassoConfig)
    prune_train: TrainConfig = field(default_factory=TrainConfig)
    fine_tune_iters: int = 2000
    trace_every: int = 100
    area: AreaModel = field(default_factory=AreaModel)
    max_dim: int = 64
    data: DataPaths = field(default_factory=DataPaths)
    output_dir: str = "out"
    stages: tuple = STAGES

    def layer_names(self):
        net = build_network(self.architecture, self.input_shape, self.n_classes)
        return [layer.name for layer in net.weighted_layers()]


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        if conv is bool:
            return cp.getboolean(section, key)
        return conv(raw)
    except ValueError:
        raise UsageError(f"{section}.{key}: cannot parse {raw!r}") from None


def _train_section(cp, section, base):
    values = {k: _get(cp, section, k, conv, getattr(base, k)) for k, conv in _TRAIN_KEYS.items()}
    return replace(base, **values)


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _names(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def load_config(path):
    """Parse a config file; paths inside it are resolved relative to the file."""
    if not os.path.exists(path):
        raise UsageError(f"config file {path!r} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read(path)
    here = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return None if p is None else os.path.normpath(os.path.join(here, os.path.expanduser(p)))

    cfg = RunConfig()
    cfg.architecture = _get(cp, "model", "architecture", str, cfg.architecture)
    cfg.input_shape = _get(cp, "model", "input_shape", _ints, cfg.input_shape)
    cfg.n_classes = _get(cp, "model", "n_classes", int, cfg.n_classes)

    cfg.train = _train_section(cp, "train", TrainConfig())
    cfg.log_every = _get(cp, "train", "log_every", int, cfg.log_every)
    cfg.clip_train = _train_section(cp, "clip", cfg.train)
    cfg.prune_train = _train_section(cp, "prune", cfg.train)

    exclude = _get(cp, "clip", "exclude", _names, None)
    cfg.clip = ClipConfig(
        epsilon=_get(cp, "clip", "epsilon", float, 0.03),
        step=_get(cp, "clip", "step", int, 500),
        max_iters=_get(cp, "clip", "max_iters", int, 5000),
        method=_get(cp, "clip", "method", str, "pca"),
        exclude=exclude or None,
        rebase=_get(cp, "clip", "rebase", bool, False),
    )
    cfg.max_dim = _get(cp, "fabric", "max_dim", int, 64)
    cfg.prune = GroupLassoConfig(
        lam=_get(cp, "prune", "lambda", float, 1e-3),
        zero_threshold=_get(cp, "prune", "zero_threshold", float, 0.1),
        iterations=_get(cp, "prune", "iterations", int, 5000),
        max_dim=cfg.max_dim,
        threshold_mode=_get(cp, "prune", "threshold_mode", str, "relative"),
    )
    cfg.fine_tune_iters = _get(cp, "prune", "fine_tune_iters", int, cfg.fine_tune_iters)
    cfg.trace_every = _get(cp, "prune", "trace_every", int, cfg.trace_every)
    cfg.area = AreaModel(
        feature_size=_get(cp, "fabric", "feature_size", float, 1.0),
        metal_width=_get(cp, "fabric", "metal_width", float, 1.0),
        metal_spacing=_get(cp, "fabric", "metal_spacing", float, 1.0),
        alpha=_get(cp, "fabric", "alpha", float, 1.0),
    )
    cfg.data = DataPaths(
        mnist_dir=resolve(_get(cp, "data", "mnist_dir", str, None)),
        train_images=resolve(_get(cp, "data", "train_images", str, None)),
        train_labels=resolve(_get(cp, "data", "train_labels", str, None)),
        test_images=resolve(_get(cp, "data", "test_images", str, None)),
        test_labels=resolve(_get(cp, "data", "test_labels", str, None)),
        train_subset=_get(cp, "data", "train_subset", int, 0),
        test_subset=_get(cp, "data", "test_subset", int, 0),
    )
    cfg.output_dir = resolve(_get(cp, "output", "dir", str, "out"))
    cfg.stages = _get(cp, "output", "stages", _names, STAGES)

    unknown = set(cfg.stages) - set(STAGES)
    if unknown:
        raise UsageError(f"unknown stages {sorted(unknown)}")
    if exclude:
        missing = set(exclude) - set(cfg.layer_names())
        if missing:
            raise UsageError(f"clip.exclude names unknown layers {sorted(missing)}")
    return cfg
