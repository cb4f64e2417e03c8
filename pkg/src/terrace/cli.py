"""``terrace`` command line: one subcommand per pipeline stage.

Exit status is 0 on success, 1 on contract, config or format errors and 2
on I/O errors. Diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import network
from .config import RunConfig, load_config, write_echo
from .errors import ContractError, TerraceError
from .gradcheck import network_gradcheck
from .inference import predict_probabilities
from .metrics import aggregate, instance_f1
from .postprocess import PostprocessConfig, instances_from_probabilities
from .raster_io import RasterContainer, read_instances, read_raster, write_instances, write_instances_geojson, write_raster
from .synthdata import generate_dataset, load_manifest
from .train import Scene, train

log = logging.getLogger("terrace")

ECHO = "effective_config.json"
SUFFIX_IMAGE = ".image.rst"
SUFFIX_PROB = ".prob.rst"
SUFFIX_INSTANCES = ".instances.rst"
SUFFIX_LABELS = ".labels.rst"


def scene_key(path: str) -> str:
    """Scene name: the file name up to its first dot."""
    return os.path.basename(path).split(".", 1)[0]


def _inputs(path: str, suffix: str) -> list[str]:
    if os.path.isdir(path):
        found = sorted(glob.glob(os.path.join(path, "*" + suffix)))
        if not found:
            raise ContractError(f"no *{suffix} files in {path}")
        return found
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return [path]


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("TERRACE_THREADS")
        value = int(env) if env else (os.cpu_count() or 1)
    if value < 1:
        raise ContractError(f"--threads must be >= 1, got {value}")
    return value


def _config(args) -> RunConfig:
    return load_config(args.config, args.set)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    manifest = generate_dataset(cfg.scene, args.n_scenes, args.out, first_seed=args.first_seed)
    write_echo(cfg, os.path.join(args.out, ECHO))
    log.info("wrote %d scenes to %s", len(manifest["scenes"]), args.out)
    return 0


def _load_scenes(data_dir: str) -> list[Scene]:
    manifest = load_manifest(data_dir)
    scenes = []
    for entry in manifest["scenes"]:
        image = read_raster(os.path.join(data_dir, entry["image"]))
        targets = read_raster(os.path.join(data_dir, entry["targets"]))
        labels = read_instances(os.path.join(data_dir, entry["labels"]))
        scenes.append(Scene(entry["name"], image.data, targets.data, labels))
    return scenes


def cmd_train(args) -> int:
    cfg = _config(args)
    scenes = _load_scenes(args.data)
    if args.init:
        weights = network.load_checkpoint(args.init)
    else:
        weights = network.build(cfg.network, cfg.train.rng_seed)
    os.makedirs(args.out, exist_ok=True)
    write_echo(cfg, os.path.join(args.out, ECHO))
    aug = cfg.augment if cfg.train.augment else None
    weights, history = train(
        cfg.train,
        scenes,
        weights,
        loss_cfg=cfg.loss,
        aug_cfg=aug,
        log_path=os.path.join(args.out, "log.jsonl"),
        checkpoint_dir=os.path.join(args.out, "epochs"),
    )
    network.save_checkpoint(weights, os.path.join(args.out, "checkpoint"))
    log.info("final epoch: %s", json.dumps(history[-1], sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    weights = network.load_checkpoint(args.checkpoint)
    cfg.network = weights.config
    os.makedirs(args.out, exist_ok=True)
    write_echo(cfg, os.path.join(args.out, ECHO))
    paths = _inputs(args.input, SUFFIX_IMAGE if os.path.isdir(args.input) else "")
    for path in paths:
        raw = read_raster(path).data
        prob = predict_probabilities(weights, raw).astype(np.float32)
        write_raster(os.path.join(args.out, scene_key(path) + SUFFIX_PROB), RasterContainer(prob, "probabilities"))
    log.info("predicted %d scene(s)", len(paths))
    return 0


def _postprocess_config(args) -> PostprocessConfig:
    cfg = _config(args)
    pp = cfg.postprocess
    if args.mask_threshold is not None or args.border_threshold is not None:
        pp = PostprocessConfig(
            mask_threshold=pp.mask_threshold if args.mask_threshold is None else args.mask_threshold,
            border_threshold=pp.border_threshold if args.border_threshold is None else args.border_threshold,
            connectivity=pp.connectivity,
            min_instance_area=pp.min_instance_area,
            priority=pp.priority,
        )
    cfg.postprocess = pp
    args.effective = cfg
    return pp


def cmd_postprocess(args) -> int:
    pp = _postprocess_config(args)
    os.makedirs(args.out, exist_ok=True)
    write_echo(args.effective, os.path.join(args.out, ECHO))
    paths = _inputs(args.input, SUFFIX_PROB if os.path.isdir(args.input) else "")
    for path in paths:
        prob = read_raster(path).data
        if prob.shape[0] != 2:
            raise ContractError(f"{path}: expected 2 probability channels, got {prob.shape[0]}")
        labels = instances_from_probabilities(prob[0], prob[1], pp)
        name = scene_key(path)
        write_instances(os.path.join(args.out, name + SUFFIX_INSTANCES), labels)
        write_instances_geojson(labels, os.path.join(args.out, name + ".geojson"))
    log.info("post-processed %d scene(s)", len(paths))
    return 0


def _instance_files(directory: str, prefer: tuple[str, str]) -> dict[str, str]:
    """Map scene name to instance-map file, taking ``prefer[0]`` over ``prefer[1]``."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(directory)
    found: dict[str, str] = {}
    for suffix in reversed(prefer):
        for path in sorted(glob.glob(os.path.join(directory, "*" + suffix))):
            found[scene_key(path)] = path
    return found


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    preds = _instance_files(args.pred, (SUFFIX_INSTANCES, SUFFIX_LABELS))
    gts = _instance_files(args.gt, (SUFFIX_LABELS, SUFFIX_INSTANCES))
    if not gts:
        raise ContractError(f"no ground-truth instance maps in {args.gt}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ContractError(f"no prediction for scene(s): {', '.join(missing[:5])}")
    per_scene, results = [], []
    for name in sorted(gts):
        r = instance_f1(read_instances(preds[name]), read_instances(gts[name]), args.iou_threshold)
        results.append(r)
        per_scene.append({"scene": name, **r.as_dict()})
    report = {"iou_threshold": args.iou_threshold, "aggregate": aggregate(results), "scenes": per_scene}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        write_echo(cfg, os.path.splitext(args.out)[0] + ".config.json")
    else:
        sys.stdout.write(text)
    log.info("aggregate F1 %.4f over %d scene(s)", report["aggregate"]["F1"], len(results))
    return 0


def cmd_extend_channels(args) -> int:
    weights = network.load_checkpoint(args.checkpoint)
    network.save_checkpoint(network.extend_input_channels(weights, args.channels), args.out)
    return 0


def cmd_gradcheck(args) -> int:
    variants = ("aggregate", "literal") if args.variant == "both" else (args.variant,)
    worst = 0.0
    for variant in variants:
        for seed in range(args.first_seed, args.first_seed + args.seeds):
            r = network_gradcheck(seed, variant, size=args.size)
            worst = max(worst, r.max_error) if r.max_error == r.max_error else float("nan")
            print(f"seed {seed} {variant}: max relative error {r.max_error:.3e}")
    ok = bool(worst < 1e-4)
    print(f"{'PASS' if ok else 'FAIL'} max relative error {worst:.3e} (limit 1e-4)")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; unknown keys are rejected")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
    common.add_argument("--threads", type=int, help="numeric thread cap (default: $TERRACE_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="terrace", description="Building footprint instance segmentation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic scene dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-scenes", type=int, required=True)
    p.add_argument("--first-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a network on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory: checkpoint/, log.jsonl, config echo")
    p.add_argument("--init", help="start from this checkpoint instead of a fresh network")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="write 2-channel probability rasters")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=f"raster file or directory of *{SUFFIX_IMAGE}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("postprocess", parents=[common], help="probabilities to instance maps and GeoJSON")
    p.add_argument("--input", required=True, help=f"raster file or directory of *{SUFFIX_PROB}")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-threshold", type=float)
    p.add_argument("--border-threshold", type=float)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", parents=[common], help="instance F1 of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="JSON report path (default: stdout)")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("extend-channels", parents=[common], help="widen a 3-channel checkpoint's input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=11)
    p.set_defaults(func=cmd_extend_channels)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the toy network")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--variant", choices=("aggregate", "literal", "both"), default="both")
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        threads = _threads(args.threads)
        with threadpool_limits(limits=threads):
            return args.func(args)
    except TerraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
