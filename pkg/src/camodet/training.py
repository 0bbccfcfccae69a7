"""Toy training loop: a synthetic separable blob task, featurization, and
deterministic mini-batch optimization of the staged detector.

Region features are 16x16 grayscale crops of the target box, flattened
row-major and scaled to [0, 1]; target boxes are normalized to the unit
square. Everything downstream of the seed is deterministic, so identical runs
produce identical parameter trajectories.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from camodet import kernels
from camodet.dataset import Category, DetectionDataset, LabeledBox, Sample
from camodet.errors import ConfigError
from camodet.geometry import Box
from camodet.ioutils import atomic_write_text, load_image
from camodet.model import (
    LossConfig,
    ModelConfig,
    RegionInput,
    RestrictionConfig,
    StagedParams,
    backward_restricted,
    detection_loss,
    detection_loss_terms,
    params_init,
    save_params,
)
from camodet.mosaic import GridSpec, augment_batch_online, nearest_indices
from camodet.optim import AdamW, SGD

FEATURE_SIDE = 16
BLOB_CLASS_NAMES = ("disk", "frame", "stripes")


def _paint_disk(patch: np.ndarray, rng: np.random.Generator) -> None:
    h, w = patch.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    inside = ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2 <= 1.0
    patch[inside] = rng.integers(200, 240)


def _paint_frame(patch: np.ndarray, rng: np.random.Generator) -> None:
    h, w = patch.shape
    t = max(2, min(h, w) // 6)
    bright = rng.integers(200, 240)
    patch[:t, :] = bright
    patch[-t:, :] = bright
    patch[:, :t] = bright
    patch[:, -t:] = bright


def _paint_stripes(patch: np.ndarray, rng: np.random.Generator) -> None:
    h, w = patch.shape
    bright = rng.integers(200, 240)
    for row in range(0, h, 4):
        patch[row : row + 2, :] = bright


_PAINTERS = (_paint_disk, _paint_frame, _paint_stripes)
_BLOB_SIDES = ((18, 27), (24, 35), (30, 43))


def make_blob_dataset(
    n_samples: int = 32,
    n_classes: int = 3,
    image_size: int = 64,
    seed: int = 0,
) -> DetectionDataset:
    """Separable synthetic detection task: one textured blob per image.

    Classes differ by texture (filled disk, hollow frame, horizontal stripes)
    and size range; the label box is the exact blob rectangle. Images live in
    memory on each Sample.
    """
    if not 1 <= n_classes <= len(BLOB_CLASS_NAMES):
        raise ConfigError(f"n_classes must be in [1, {len(BLOB_CLASS_NAMES)}], got {n_classes}")
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    categories = [Category(id=i + 1, name=BLOB_CLASS_NAMES[i]) for i in range(n_classes)]
    samples = []
    for i in range(n_samples):
        cls = i % n_classes
        gray = rng.integers(0, 32, (image_size, image_size)).astype(np.uint8)
        lo, hi = _BLOB_SIDES[cls]
        w = int(rng.integers(lo, hi))
        h = int(rng.integers(lo, hi))
        x0 = int(rng.integers(1, image_size - w))
        y0 = int(rng.integers(1, image_size - h))
        patch = gray[y0 : y0 + h, x0 : x0 + w]
        patch[:] = rng.integers(40, 70)
        _PAINTERS[cls](patch, rng)
        pixels = np.stack([gray, gray, gray], axis=2)
        samples.append(
            Sample(
                image_id=i + 1,
                image_path=f"blob_{i + 1:04d}.png",
                width=image_size,
                height=image_size,
                labels=[LabeledBox(box=Box(x0, y0, x0 + w, y0 + h), category_id=cls + 1)],
                split="train",
                pixels=pixels,
            )
        )
    return DetectionDataset(categories=categories, samples=samples)


def featurize_region(pixels: np.ndarray, box: Box, side: int = FEATURE_SIDE) -> np.ndarray:
    """Flatten a nearest-neighbor side x side grayscale crop of the box to [0, 1]."""
    rows = nearest_indices(box.y_min, box.height, side)
    cols = nearest_indices(box.x_min, box.width, side)
    crop = kernels.gather_pixels(pixels, rows, cols)
    if crop.ndim == 3:
        crop = crop.mean(axis=2)
    return (crop.astype(np.float64) / 255.0).ravel()


def regions_from_samples(
    samples: Iterable[Sample],
    categories: Sequence[Category],
    *,
    side: int = FEATURE_SIDE,
    images_root: Optional[str | Path] = None,
) -> list[RegionInput]:
    """RegionInputs for every labeled box, class ids mapped to table indices."""
    index_of = {cat.id: i for i, cat in enumerate(categories)}
    regions = []
    for sample in samples:
        pixels = sample.pixels
        if pixels is None:
            root = Path(images_root) if images_root is not None else Path(".")
            pixels = load_image(root / sample.image_path)
        for label in sample.labels:
            if label.category_id not in index_of:
                raise ConfigError(
                    f"image {sample.image_id}: category {label.category_id} not in table"
                )
            normalized = Box(
                label.box.x_min / sample.width,
                label.box.y_min / sample.height,
                label.box.x_max / sample.width,
                label.box.y_max / sample.height,
            )
            regions.append(
                RegionInput(
                    features=featurize_region(pixels, label.box, side),
                    box=normalized,
                    category_index=index_of[label.category_id],
                )
            )
    return regions


@dataclass
class TrainResult:
    params: StagedParams
    log: list[dict] = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0


def train_toy(
    dataset: DetectionDataset,
    epochs: int,
    restriction: RestrictionConfig,
    loss_cfg: LossConfig,
    seed: int,
    *,
    batch_size: int = 16,
    lr: float = 3e-4,
    beta1: float = 0.9,
    weight_decay: float = 0.05,
    optimizer: str = "adamw",
    augment_grids: Optional[Sequence[GridSpec]] = None,
    images_root: Optional[str | Path] = None,
    log_path: Optional[str | Path] = None,
    checkpoint_path: Optional[str | Path] = None,
) -> TrainResult:
    """Mini-batch training of the staged detector on a detection dataset.

    Batches are drawn from a seed-derived shuffle each epoch and optionally
    extended in flight by the grid-mosaic augmentation. The log holds one
    record per epoch; if log_path is given it is written as JSON lines, and
    checkpoint_path stores the final parameters (exact npz round trip).
    """
    train_samples = [s for s in dataset.samples if s.split == "train"]
    if not train_samples:
        raise ConfigError("dataset has no train samples")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")

    config = ModelConfig(
        feature_dim=FEATURE_SIDE * FEATURE_SIDE,
        num_classes=len(dataset.categories),
    )
    rng = np.random.default_rng(seed)
    params = params_init(config, rng)
    if optimizer == "adamw":
        stepper = AdamW(lr=lr, beta1=beta1, weight_decay=weight_decay)
    elif optimizer == "sgd":
        stepper = SGD(lr=lr)
    else:
        raise ConfigError(f"unknown optimizer {optimizer!r}")

    all_regions = regions_from_samples(
        train_samples, dataset.categories, images_root=images_root
    )
    initial_loss = detection_loss(params, all_regions, loss_cfg)

    log: list[dict] = []
    lambda_settings = {
        "mode": restriction.mode,
        "lambda_hn": restriction.lambda_hn,
        "lambda_nb": restriction.lambda_nb,
        "lambda_uniform": restriction.lambda_uniform,
    }
    for epoch in range(epochs):
        start = time.perf_counter()
        order = rng.permutation(len(train_samples))
        sums = {"loss": 0.0, "loss_bbox": 0.0, "loss_contrastive": 0.0, "loss_focal": 0.0}
        n_batches = 0
        for chunk_start in range(0, len(order), batch_size):
            chunk = order[chunk_start : chunk_start + batch_size]
            batch = [train_samples[int(i)] for i in chunk]
            if augment_grids:
                batch = augment_batch_online(
                    batch,
                    augment_grids,
                    seed=int(rng.integers(2**31)),
                    images_root=images_root,
                )
            regions = regions_from_samples(batch, dataset.categories, images_root=images_root)
            terms = detection_loss_terms(params, regions, loss_cfg)
            grads = backward_restricted(params, regions, restriction, loss_cfg)
            params = stepper.step(params, grads)
            for key in sums:
                sums[key] += terms[key]
            n_batches += 1
        record = {"epoch": epoch}
        record.update({key: sums[key] / n_batches for key in sums})
        record.update(lambda_settings)
        record["wall_time"] = time.perf_counter() - start
        log.append(record)

    final_loss = detection_loss(params, all_regions, loss_cfg)
    if log_path is not None:
        atomic_write_text(log_path, "".join(json.dumps(rec) + "\n" for rec in log))
    if checkpoint_path is not None:
        save_params(checkpoint_path, params)
    return TrainResult(params=params, log=log, initial_loss=initial_loss, final_loss=final_loss)
