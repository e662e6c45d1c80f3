"""Command line pipeline: train -> clip -> prune -> map -> report.

Each subcommand reads ``--config``; checkpoints and reports go to the
config's output directory unless ``--out`` overrides it. Log verbosity
comes from the ``XBAR_LOG_LEVEL`` environment variable.
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint, fabric
from .clipper import rank_clip_train
from .config import load_config
from .data import load_idx, load_mnist
from .exceptions import FormatError, NumericError, UsageError
from .nn import build_network, evaluate, train
from .scissor import delete_groups, eligible_arrays, fine_tune, regularized_train

log = logging.getLogger("xbarcompress")

FILES = {
    "train": "model.ckpt",
    "clip": "clipped.ckpt",
    "prune": "pruned.ckpt",
}


def _datasets(cfg):
    d = cfg.data
    if d.train_images and d.train_labels:
        train_set = load_idx(d.train_images, d.train_labels)
        test_set = load_idx(d.test_images, d.test_labels) if d.test_images and d.test_labels else None
    elif d.mnist_dir:
        train_set = load_mnist(d.mnist_dir, "train")
        test_set = load_mnist(d.mnist_dir, "test")
    else:
        raise UsageError("config needs data.mnist_dir or data.train_images/train_labels")
    if d.train_subset:
        train_set = train_set.head(d.train_subset)
    if test_set is not None and d.test_subset:
        test_set = test_set.head(d.test_subset)
    return train_set, test_set


def _load(path, stage):
    if path is None or not os.path.exists(path):
        raise UsageError(f"{stage}: checkpoint {path!r} not found")
    try:
        net = checkpoint.load(path)
    except FormatError as exc:
        raise UsageError(f"{stage}: {path} is not a valid checkpoint: {exc}") from None
    for layer in net.weighted_layers():
        if layer.weight is None and layer.factors is None:
            raise UsageError(f"{stage}: checkpoint {path} has no weights for layer {layer.name}")
    return net


def _out(cfg, name):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_train(cfg, checkpoint_path=None):
    train_set, test_set = _datasets(cfg)
    net = build_network(cfg.architecture, cfg.input_shape, cfg.n_classes, seed=cfg.train.seed)
    rows = []
    window = []

    def record(net, loss):
        window.append(loss)
        if net.iteration % cfg.log_every == 0 or net.iteration == cfg.train.max_iters:
            acc = evaluate(net, test_set) if test_set is not None else ""
            rows.append([net.iteration, fabric.fmt6(float(np.mean(window))), fabric.fmt6(acc) if acc != "" else ""])
            window.clear()

    train(net, train_set, cfg.train, callback=record)
    path = checkpoint_path or _out(cfg, FILES["train"])
    checkpoint.save(net, path)
    _write_csv(_out(cfg, "train_metrics.csv"), ["iteration", "loss", "test_accuracy"], rows)
    log.info("train: saved %s", path)
    return path


def cmd_clip(cfg, checkpoint_path=None):
    net = _load(checkpoint_path or _out(cfg, FILES["train"]), "clip")
    train_set, test_set = _datasets(cfg)
    net, trace = rank_clip_train(net, cfg.clip, cfg.clip_train, train_set, test=test_set)
    path = _out(cfg, FILES["clip"])
    checkpoint.save(net, path)
    trace.to_csv(_out(cfg, "clip_trace.csv"))
    log.info("clip: final ranks %s", net.ranks())
    return path


def cmd_prune(cfg, checkpoint_path=None):
    net = _load(checkpoint_path or _out(cfg, FILES["clip"]), "prune")
    if not eligible_arrays(net, cfg.max_dim):
        raise UsageError(f"prune: no crossbar array exceeds {cfg.max_dim}; nothing to group")
    train_set, test_set = _datasets(cfg)
    probe = test_set if test_set is not None else train_set.head(2000)
    net, trace = regularized_train(net, cfg.prune, cfg.prune_train, train_set, cfg.trace_every, probe)
    delete_groups(net, cfg.prune)
    fine_tune(net, cfg.prune_train, train_set, cfg.fine_tune_iters)
    path = _out(cfg, FILES["prune"])
    checkpoint.save(net, path)
    trace.to_csv(_out(cfg, "deletion_trace.csv"))
    return path


def tiling_manifest(net, max_dim=fabric.MAX_DIM):
    arrays = []
    for layer in net.weighted_layers():
        for name, key, matrix in layer.crossbar_arrays():
            mask = layer.masks.get(key)
            tiling = mask.tiling if mask is not None and mask.tiling is not None else fabric.select_tiling(*matrix.shape, max_dim=max_dim)
            arrays.append({
                "array": name,
                "layer": layer.name,
                "matrix": list(matrix.shape),
                "tile": [tiling.P, tiling.Q],
                "grid": list(tiling.grid),
                "tiles": fabric.tile_count(tiling),
                "padded": tiling.padded,
                "wires": fabric.routing_wires(tiling, None if mask is None else mask.deleted),
                "deleted_row_groups": [] if mask is None else [int(i) for i in mask.row_groups],
                "deleted_col_groups": [] if mask is None else [int(i) for i in mask.col_groups],
            })
    return {"max_dim": max_dim, "arrays": arrays}


def cmd_map(cfg, checkpoint_path=None):
    net = _load(checkpoint_path or _out(cfg, FILES["prune"]), "map")
    path = _out(cfg, "tiling.json")
    with open(path, "w", newline="\n") as fh:
        json.dump(tiling_manifest(net, cfg.max_dim), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def cmd_report(cfg, checkpoint_path=None, baseline_path=None):
    net = _load(checkpoint_path or _out(cfg, FILES["prune"]), "report")
    baseline = None
    if baseline_path is not None:
        baseline = fabric.net_report(_load(baseline_path, "report"), cfg.area, max_dim=cfg.max_dim)
    report = fabric.net_report(net, cfg.area, baseline, max_dim=cfg.max_dim)
    path = _out(cfg, "report.csv")
    report.to_csv(path)
    table = report.to_table()
    with open(_out(cfg, "report.txt"), "w", newline="\n") as fh:
        fh.write(table + "\n")
    print(table)
    return path


def run_pipeline(cfg):
    paths = {}
    if "train" in cfg.stages:
        paths["train"] = cmd_train(cfg)
    if "clip" in cfg.stages:
        paths["clip"] = cmd_clip(cfg)
    if "prune" in cfg.stages:
        paths["prune"] = cmd_prune(cfg)
    last = paths.get("prune") or paths.get("clip") or paths.get("train")
    if "map" in cfg.stages:
        paths["map"] = cmd_map(cfg, last)
    if "report" in cfg.stages:
        base = paths.get("train") if last != paths.get("train") else None
        paths["report"] = cmd_report(cfg, last, base)
    return paths


def build_parser():
    parser = argparse.ArgumentParser(prog="xbarcompress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "clip", "prune", "map", "report", "run"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        if name in ("clip", "prune", "map", "report"):
            p.add_argument("--checkpoint", help="input checkpoint")
        if name == "report":
            p.add_argument("--baseline", help="checkpoint whose costs count as 100%%")
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("XBAR_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output_dir = args.out
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "clip":
            cmd_clip(cfg, args.checkpoint)
        elif args.command == "prune":
            cmd_prune(cfg, args.checkpoint)
        elif args.command == "map":
            cmd_map(cfg, args.checkpoint)
        elif args.command == "report":
            cmd_report(cfg, args.checkpoint, args.baseline)
        else:
            run_pipeline(cfg)
    except (UsageError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
