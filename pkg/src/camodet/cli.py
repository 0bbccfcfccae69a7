"""Command-line interface.

Subcommands: convert-masks, summarize, sfr-offline, train-toy, evaluate,
gradcheck. Any flag may also come from a JSON config file (--config);
explicit command-line flags win. Typed failures print a single
``error[code]: message`` line on stderr and exit nonzero; outputs are written
atomically so an interrupted run never leaves partial files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from camodet import __version__
from camodet.dataset import (
    Category,
    DetectionDataset,
    LabeledBox,
    Sample,
    dataset_summary,
    mask_to_boxes,
    merge_boxes,
    read_annotations,
    write_annotations,
)
from camodet.errors import CamodetError, ConfigError
from camodet.evaluation import coco_metrics, read_detections, write_report
from camodet.geometry import Box
from camodet.ioutils import load_mask
from camodet.model import (
    LossConfig,
    ModelConfig,
    RegionInput,
    RestrictionConfig,
    gradient_check,
    params_init,
)
from camodet.mosaic import generate_offline, make_grids
from camodet.training import make_blob_dataset, train_toy

METRIC_NAMES = ("mAP", "AP50", "AP75", "APm", "APl")

# One source of truth for defaults: interpolated into --help and used as the
# fallback layer below JSON config values and command-line flags.
DEFAULTS = {
    "grids": "2,3,4",
    "pool_size": 16,
    "crop": 200,
    "canvas": 800,
    "threshold": 128,
    "merge_gap": -1.0,
    "split": "train",
    "mode": "boundary",
    "lambda_hn": 0.08,
    "lambda_nb": 0.08,
    "lambda_uniform": 0.08,
    "lr": 0.0003,
    "beta1": 0.9,
    "weight_decay": 0.05,
    "optimizer": "adamw",
    "epochs": 250,
    "batch_size": 16,
    "samples": 32,
    "classes": 3,
    "gamma": 2.0,
    "alpha": 0.25,
    "temperature": 0.07,
    "w_bbox": 1.0,
    "w_contrastive": 1.0,
    "w_cls": 1.0,
    "step": 1e-5,
    "tolerance": 1e-4,
    "models": 1,
    "metrics": ", ".join(METRIC_NAMES),
}

MASK_SUFFIXES = (".png", ".ppm", ".pgm")


def _add_option(parser: argparse.ArgumentParser, flag: str, key: str, kind, text: str) -> None:
    parser.add_argument(
        flag, dest=key, type=kind, default=None, help=f"{text} (default: {DEFAULTS[key]})"
    )


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(raw) - set(DEFAULTS) - {"seed", "annotations", "images_root", "out",
                                          "masks", "detections", "log", "checkpoint",
                                          "augment_grids"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return raw


def _resolve(args: argparse.Namespace, config: dict, key: str):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _parse_grid_dims(text: str) -> list[int]:
    try:
        dims = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid list {text!r}: {exc}") from exc
    if not dims:
        raise ConfigError(f"bad grid list {text!r}: no grid dimensions")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camodet",
        description="Box-level camouflaged-object detection toolkit: dataset "
        "conversion, grid-mosaic augmentation, restricted-gradient toy training, "
        "and COCO-style evaluation.",
        epilog="Set CAMODET_NUMBA=0 to force the pure-numpy kernels, 1 to require "
        "the numba kernels; the default (auto) uses numba when importable.",
    )
    parser.add_argument("--version", action="version", version=f"camodet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "convert-masks",
        help="convert a directory of binary masks to annotations.json",
        description="Convert grayscale masks to box annotations: one 8-connected "
        "component per box, flagged for review when a mask splits into several "
        "components. Subdirectories of --masks become categories; a flat "
        "directory becomes the single category 'object'.",
    )
    p.add_argument("--masks", help="directory of mask images (png/ppm/pgm)")
    p.add_argument("--out", help="output annotations.json path")
    _add_option(p, "--threshold", "threshold", int, "foreground threshold in [1, 255]")
    _add_option(
        p, "--merge-gap", "merge_gap", float,
        "merge component boxes closer than this gap in pixels; negative disables merging",
    )
    _add_option(p, "--split", "split", str, "split recorded for every image (train or test)")
    p.add_argument("--config", help="JSON config file supplying any flag")

    p = sub.add_parser(
        "summarize",
        help="print dataset statistics",
        description="Print category, per-split image, and box counts for an "
        "annotations.json dataset.",
    )
    p.add_argument("--annotations", help="annotations.json path")
    p.add_argument("--config", help="JSON config file supplying any flag")

    p = sub.add_parser(
        "sfr-offline",
        help="assemble labeled boxes into grid-mosaic pseudo-images on disk",
        description="Crop every labeled train-split box to a fixed patch "
        "(default 200x200 pixels), shuffle once with --seed, and tile pools of "
        "crops onto black square canvases, one canvas set per grid dimension. "
        "Writes images/, annotations.json, and manifest.json under --out.",
    )
    p.add_argument("--annotations", help="input annotations.json")
    p.add_argument("--images-root", dest="images_root", help="directory image paths are relative to")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (required)")
    _add_option(p, "--grids", "grids", str, "comma-separated grid dimensions")
    _add_option(p, "--pool-size", "pool_size", int, "boxes consumed per pool")
    _add_option(p, "--crop", "crop", int, "crop patch side in pixels")
    _add_option(p, "--canvas", "canvas", int, "canvas side in pixels")
    p.add_argument("--config", help="JSON config file supplying any flag")

    p = sub.add_parser(
        "train-toy",
        help="train the toy staged detector",
        description="Train the three-stage toy detector with restricted "
        "backpropagation (boundary mode scales the gradient signal crossing the "
        "head-to-neck and neck-to-backbone boundaries; update mode scales every "
        "block uniformly) and AdamW. Without --annotations a synthetic separable "
        "3-class blob dataset is generated.",
    )
    p.add_argument("--annotations", help="train on this dataset instead of the synthetic task")
    p.add_argument("--images-root", dest="images_root", help="directory image paths are relative to")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (required)")
    _add_option(p, "--epochs", "epochs", int, "training epochs")
    _add_option(p, "--batch-size", "batch_size", int, "samples per batch")
    _add_option(p, "--samples", "samples", int, "synthetic dataset size")
    _add_option(p, "--classes", "classes", int, "synthetic class count (1-3)")
    _add_option(p, "--mode", "mode", str, "restriction mode: boundary or update")
    _add_option(p, "--lambda-hn", "lambda_hn", float, "head-to-neck restriction factor")
    _add_option(p, "--lambda-nb", "lambda_nb", float, "neck-to-backbone restriction factor")
    _add_option(p, "--lambda", "lambda_uniform", float, "uniform restriction factor (update mode)")
    _add_option(p, "--lr", "lr", float, "learning rate")
    _add_option(p, "--beta1", "beta1", float, "AdamW first-moment coefficient")
    _add_option(p, "--weight-decay", "weight_decay", float, "AdamW decoupled weight decay")
    _add_option(p, "--optimizer", "optimizer", str, "adamw or sgd")
    _add_option(p, "--gamma", "gamma", float, "focal loss exponent")
    _add_option(p, "--alpha", "alpha", float, "focal loss weight")
    _add_option(p, "--temperature", "temperature", float, "contrastive softmax temperature")
    _add_option(p, "--w-bbox", "w_bbox", float, "box loss weight")
    _add_option(p, "--w-contrastive", "w_contrastive", float, "contrastive loss weight")
    _add_option(p, "--w-cls", "w_cls", float, "classification loss weight")
    p.add_argument(
        "--augment-grids", dest="augment_grids", default=None,
        help="enable online mosaic augmentation with these grid dimensions, e.g. 2,3,4",
    )
    _add_option(p, "--canvas", "canvas", int, "canvas side for online augmentation")
    _add_option(p, "--crop", "crop", int, "crop patch side for online augmentation")
    p.add_argument("--log", help="write per-epoch JSON-lines training log here")
    p.add_argument("--checkpoint", help="write final parameters here (npz)")
    p.add_argument("--config", help="JSON config file supplying any flag")

    p = sub.add_parser(
        "evaluate",
        help="score detections against a dataset (mAP, AP50, AP75, APm, APl)",
        description="COCO-style evaluation over IoU thresholds .50:.05:.95: "
        "reports mAP, AP50, AP75, APm, APl, per-category AP, and the "
        "class-agnostic localization score.",
    )
    p.add_argument("--annotations", help="ground-truth annotations.json")
    p.add_argument("--detections", help="detections JSON list")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--config", help="JSON config file supplying any flag")

    p = sub.add_parser(
        "gradcheck",
        help="compare analytic gradients against central finite differences",
        description="Build small random models (feature dim 8, hidden 6 and 4, "
        "3 classes) and random batches, then compare the analytic gradient of "
        "the combined loss with central finite differences.",
    )
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: 0)")
    _add_option(p, "--models", "models", int, "number of random models to check")
    _add_option(p, "--step", "step", float, "finite-difference step")
    _add_option(p, "--tolerance", "tolerance", float, "max relative error allowed")
    p.add_argument("--config", help="JSON config file supplying any flag")

    return parser


def _restriction_from(args, config) -> RestrictionConfig:
    return RestrictionConfig(
        mode=_resolve(args, config, "mode"),
        lambda_hn=float(_resolve(args, config, "lambda_hn")),
        lambda_nb=float(_resolve(args, config, "lambda_nb")),
        lambda_uniform=float(_resolve(args, config, "lambda_uniform")),
    )


def _loss_from(args, config) -> LossConfig:
    return LossConfig(
        focal_gamma=float(_resolve(args, config, "gamma")),
        focal_alpha=float(_resolve(args, config, "alpha")),
        temperature=float(_resolve(args, config, "temperature")),
        w_bbox=float(_resolve(args, config, "w_bbox")),
        w_contrastive=float(_resolve(args, config, "w_contrastive")),
        w_cls=float(_resolve(args, config, "w_cls")),
    )


def cmd_convert_masks(args, config) -> int:
    masks_root = Path(_require(_resolve(args, config, "masks"), "--masks"))
    out_path = _require(_resolve(args, config, "out"), "--out")
    threshold = int(_resolve(args, config, "threshold"))
    merge_gap = float(_resolve(args, config, "merge_gap"))
    split = _resolve(args, config, "split")
    if not masks_root.is_dir():
        raise ConfigError(f"--masks directory not found: {masks_root}")

    subdirs = sorted(d for d in masks_root.iterdir() if d.is_dir())
    if subdirs:
        categories = [Category(id=i + 1, name=d.name) for i, d in enumerate(subdirs)]
        sources = [(d, i + 1) for i, d in enumerate(subdirs)]
    else:
        categories = [Category(id=1, name="object")]
        sources = [(masks_root, 1)]

    samples = []
    image_id = 0
    n_boxes = 0
    n_review = 0
    for directory, category_id in sources:
        files = sorted(
            f for f in directory.iterdir() if f.suffix.lower() in MASK_SUFFIXES
        )
        for mask_path in files:
            mask = load_mask(mask_path)
            boxes = [
                LabeledBox(box=lb.box, category_id=category_id, review=lb.review)
                for lb in mask_to_boxes(mask, threshold)
            ]
            if merge_gap >= 0:
                boxes = merge_boxes(boxes, merge_gap)
            image_id += 1
            n_boxes += len(boxes)
            n_review += sum(1 for b in boxes if b.review)
            samples.append(
                Sample(
                    image_id=image_id,
                    image_path=str(mask_path.relative_to(masks_root)),
                    width=mask.shape[1],
                    height=mask.shape[0],
                    labels=boxes,
                    split=split,
                )
            )
    dataset = DetectionDataset(categories=categories, samples=samples)
    write_annotations(dataset, out_path)
    print(f"wrote {out_path}: {len(samples)} images, {n_boxes} boxes, "
          f"{n_review} flagged for review")
    return 0


def cmd_summarize(args, config) -> int:
    path = _require(_resolve(args, config, "annotations"), "--annotations")
    print(dataset_summary(read_annotations(path)).format())
    return 0


def cmd_sfr_offline(args, config) -> int:
    annotations = _require(_resolve(args, config, "annotations"), "--annotations")
    out_dir = _require(_resolve(args, config, "out"), "--out")
    seed = _require(_resolve(args, config, "seed"), "--seed")
    canvas = int(_resolve(args, config, "canvas"))
    grids = make_grids(_parse_grid_dims(_resolve(args, config, "grids")), canvas)
    dataset = read_annotations(annotations)
    pseudo = generate_offline(
        dataset,
        grids,
        pool_size=int(_resolve(args, config, "pool_size")),
        seed=int(seed),
        out_dir=out_dir,
        crop_size=int(_resolve(args, config, "crop")),
        images_root=_resolve(args, config, "images_root"),
    )
    print(f"wrote {len(pseudo.samples)} pseudo-images to {out_dir}")
    return 0


def cmd_train_toy(args, config) -> int:
    seed = int(_require(_resolve(args, config, "seed"), "--seed"))
    annotations = _resolve(args, config, "annotations")
    if annotations is not None:
        dataset = read_annotations(annotations)
    else:
        dataset = make_blob_dataset(
            n_samples=int(_resolve(args, config, "samples")),
            n_classes=int(_resolve(args, config, "classes")),
            seed=seed,
        )
    augment = _resolve(args, config, "augment_grids")
    grids = None
    if augment is not None:
        canvas = int(_resolve(args, config, "canvas"))
        grids = make_grids(_parse_grid_dims(augment), canvas)
    result = train_toy(
        dataset,
        epochs=int(_resolve(args, config, "epochs")),
        restriction=_restriction_from(args, config),
        loss_cfg=_loss_from(args, config),
        seed=seed,
        batch_size=int(_resolve(args, config, "batch_size")),
        lr=float(_resolve(args, config, "lr")),
        beta1=float(_resolve(args, config, "beta1")),
        weight_decay=float(_resolve(args, config, "weight_decay")),
        optimizer=_resolve(args, config, "optimizer"),
        augment_grids=grids,
        images_root=_resolve(args, config, "images_root"),
        log_path=_resolve(args, config, "log"),
        checkpoint_path=_resolve(args, config, "checkpoint"),
    )
    print(
        f"trained {len(result.log)} epochs: loss {result.initial_loss:.4f} -> "
        f"{result.final_loss:.4f}"
    )
    return 0


def cmd_evaluate(args, config) -> int:
    annotations = _require(_resolve(args, config, "annotations"), "--annotations")
    detections_path = _require(_resolve(args, config, "detections"), "--detections")
    dataset = read_annotations(annotations)
    detections = read_detections(detections_path, dataset)
    report = coco_metrics(detections, dataset)
    print(report.format())
    out = _resolve(args, config, "out")
    if out is not None:
        write_report(report, out)
        print(f"wrote {out}")
    return 0


def cmd_gradcheck(args, config) -> int:
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    n_models = int(_resolve(args, config, "models"))
    step = float(_resolve(args, config, "step"))
    tolerance = float(_resolve(args, config, "tolerance"))
    model_cfg = ModelConfig(feature_dim=8, hidden1=6, hidden2=4, embed_dim=4, num_classes=3)
    loss_cfg = LossConfig()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        params = params_init(model_cfg, rng)
        batch = []
        for _ in range(4):
            cx, cy = rng.uniform(0.3, 0.7, 2)
            w, h = rng.uniform(0.15, 0.5, 2)
            batch.append(
                RegionInput(
                    features=rng.normal(0.0, 1.0, model_cfg.feature_dim),
                    box=Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                    category_index=int(rng.integers(model_cfg.num_classes)),
                )
            )
        worst = max(worst, gradient_check(params, batch, loss_cfg, step))
    print(f"max relative gradient error over {n_models} model(s): {worst:.3e} "
          f"(tolerance {tolerance:.0e})")
    return 0 if worst <= tolerance else 1


COMMANDS = {
    "convert-masks": cmd_convert_masks,
    "summarize": cmd_summarize,
    "sfr-offline": cmd_sfr_offline,
    "train-toy": cmd_train_toy,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _load_config(getattr(args, "config", None))
    return COMMANDS[args.command](args, config)


def main(argv=None) -> int:
    try:
        return run(argv)
    except CamodetError as exc:
        print(f"error[{exc.code}]: {exc.message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
