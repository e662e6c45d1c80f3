import json
import os

import numpy as np
import pytest

from xbarcompress import checkpoint
from xbarcompress.cli import main
from xbarcompress.config import load_config
from xbarcompress.data import write_idx
from xbarcompress.exceptions import UsageError
from xbarcompress.nn import mlp

CONFIG = """
[model]
architecture = conv:4:3,pool:2,fc:20,relu,fc:3
input_shape = 1,10,10
n_classes = 3
[train]
max_iters = 40
learning_rate = 0.05
momentum = 0.9
batch_size = 16
log_every = 10
[clip]
epsilon = 0.1
step = 10
max_iters = 30
[prune]
lambda = 1e-3
zero_threshold = 0.05
iterations = 20
fine_tune_iters = 10
trace_every = 10
[fabric]
max_dim = 8
[data]
train_images = data/train-img
train_labels = data/train-lbl
test_images = data/test-img
test_labels = data/test-lbl
[output]
dir = out
"""


def _write_data(root, seed, n):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, n)
    images = rng.integers(0, 60, size=(n, 10, 10))
    for i, y in enumerate(labels):
        images[i, 3 * y:3 * y + 4, 2:8] += 190
    return images, labels


@pytest.fixture
def workdir(tmp_path):
    os.makedirs(tmp_path / "data")
    for split, seed, n in (("train", 0, 300), ("test", 1, 100)):
        images, labels = _write_data(tmp_path, seed, n)
        write_idx(images, labels, tmp_path / f"data/{split}-img", tmp_path / f"data/{split}-lbl")
    (tmp_path / "run.ini").write_text(CONFIG)
    return tmp_path


OUTPUTS = ["model.ckpt", "train_metrics.csv", "clipped.ckpt", "clip_trace.csv", "pruned.ckpt",
           "deletion_trace.csv", "tiling.json", "report.csv", "report.txt"]


def test_pipeline_is_deterministic(workdir, capsys):
    cfg = str(workdir / "run.ini")
    assert main(["run", "--config", cfg]) == 0
    assert main(["run", "--config", cfg, "--out", str(workdir / "again")]) == 0
    for name in OUTPUTS:
        a = (workdir / "out" / name).read_bytes()
        assert a == (workdir / "again" / name).read_bytes(), name
    assert "TOTAL" in capsys.readouterr().out
    manifest = json.loads((workdir / "out/tiling.json").read_text())
    assert {a["array"] for a in manifest["arrays"]} >= {"fc1_u", "fc1_v", "fc2"}
    assert all(a["tile"][0] <= 8 and a["tile"][1] <= 8 for a in manifest["arrays"])


def test_stagewise_commands_and_isolation(workdir):
    cfg = str(workdir / "run.ini")
    out = workdir / "out"
    assert main(["train", "--config", cfg]) == 0
    assert main(["clip", "--config", cfg]) == 0
    ranks = checkpoint.load(out / "clipped.ckpt").ranks()
    assert ranks["conv1"] <= 4 and ranks["fc1"] <= 20
    before = (out / "clipped.ckpt").read_bytes()
    assert main(["map", "--config", cfg, "--checkpoint", str(out / "clipped.ckpt")]) == 0
    assert main(["report", "--config", cfg, "--checkpoint", str(out / "clipped.ckpt"),
                 "--baseline", str(out / "clipped.ckpt")]) == 0
    assert (out / "clipped.ckpt").read_bytes() == before
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "layer,cells,area_F2,area_pct,wires,wires_pct,routing_area_pct"
    for line in lines[1:]:
        assert line.split(",")[3::2] == ["100.000", "100.000"] and line.endswith("100.000")
    first = (out / "report.csv").read_bytes()
    main(["report", "--config", cfg, "--checkpoint", str(out / "clipped.ckpt"),
          "--baseline", str(out / "clipped.ckpt")])
    assert (out / "report.csv").read_bytes() == first
    assert main(["prune", "--config", cfg]) == 0
    assert (out / "deletion_trace.csv").read_text().startswith("iteration,layer,zero_group_fraction_row")


def test_missing_checkpoint_is_usage_error(workdir, capsys):
    code = main(["clip", "--config", str(workdir / "run.ini"), "--checkpoint", str(workdir / "nope.ckpt")])
    assert code != 0
    assert "clip" in capsys.readouterr().err


def test_checkpoint_without_weights_is_usage_error(workdir, capsys):
    net = mlp((100, 3), seed=0)
    net.layer("fc1").weight = None
    checkpoint.save(net, workdir / "empty.ckpt")
    code = main(["clip", "--config", str(workdir / "run.ini"), "--checkpoint", str(workdir / "empty.ckpt")])
    assert code != 0
    assert "clip" in capsys.readouterr().err


def test_garbage_checkpoint_is_usage_error(workdir, capsys):
    (workdir / "junk.ckpt").write_bytes(b"hello")
    assert main(["report", "--config", str(workdir / "run.ini"), "--checkpoint", str(workdir / "junk.ckpt")]) != 0
    assert "report" in capsys.readouterr().err


def test_config_keys_and_validation(workdir):
    cfg = load_config(workdir / "run.ini")
    assert cfg.clip.epsilon == 0.1 and cfg.clip.step == 10 and cfg.train.max_iters == 40
    assert cfg.prune.lam == 1e-3 and cfg.max_dim == 8 and cfg.prune.max_dim == 8
    assert cfg.data.train_images == str(workdir / "data/train-img")
    bad = workdir / "bad.ini"
    bad.write_text(CONFIG.replace("epsilon = 0.1", "epsilon = 0.1\nexclude = fc9"))
    with pytest.raises(UsageError, match="fc9"):
        load_config(bad)
    with pytest.raises(UsageError):
        load_config(workdir / "missing.ini")
