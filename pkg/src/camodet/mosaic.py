"""Grid-mosaic augmentation: crop labeled boxes, tile them onto square canvases.

Every labeled box is cropped and resampled to a fixed patch (200x200 by
default), pools of patches are scattered over g x g grids of a fixed-size
canvas (black background), and each placed patch gets its cell rectangle as
its new label. Works online (per training batch, in memory) and offline
(whole dataset, written to disk); both modes share one assembly path so equal
seeds give pixel-identical canvases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from camodet import kernels
from camodet.dataset import DetectionDataset, LabeledBox, Sample, write_annotations
from camodet.errors import MosaicError
from camodet.geometry import Box
from camodet.ioutils import atomic_write_json, load_image, save_image

logger = logging.getLogger(__name__)

DEFAULT_CROP_SIZE = 200
DEFAULT_CANVAS_SIZE = 800
DEFAULT_POOL_SIZE = 16
DEFAULT_GRID_DIMS = (2, 3, 4)
MIN_BOX_EXTENT = 2.0


@dataclass(frozen=True)
class GridSpec:
    """A g x g tiling of a square canvas; the S mod g remainder stays black."""

    g: int
    canvas_size: int = DEFAULT_CANVAS_SIZE

    def __post_init__(self) -> None:
        if self.g < 2:
            raise MosaicError(f"grid dimension must be >= 2, got {self.g}")
        if self.canvas_size < self.g:
            raise MosaicError(
                f"canvas size {self.canvas_size} smaller than grid dimension {self.g}"
            )

    @property
    def cell_size(self) -> int:
        return self.canvas_size // self.g


def make_grids(dims: Iterable[int], canvas_size: int = DEFAULT_CANVAS_SIZE) -> list[GridSpec]:
    """GridSpecs for the given dimensions, ascending, duplicates removed."""
    return [GridSpec(g=g, canvas_size=canvas_size) for g in sorted(set(dims))]


@dataclass
class CropPatch:
    """A labeled box resampled to a fixed patch, with its origin remembered."""

    pixels: np.ndarray
    source_image_id: int
    source_box: Box
    category_id: Optional[int] = None


@dataclass
class MosaicCanvas:
    """One assembled canvas.

    labels[i] and crops[i] describe the same placed patch; provenance maps
    cell index -> index into crops, or None for a black cell.
    """

    pixels: np.ndarray
    labels: list[LabeledBox]
    grid: GridSpec
    crops: list[CropPatch] = field(default_factory=list)
    provenance: list[Optional[int]] = field(default_factory=list)


def nearest_indices(origin: float, extent: float, out: int) -> np.ndarray:
    """Nearest-neighbor source indices: floor(origin + floor((i + 0.5) * extent / out))."""
    offsets = np.floor((np.arange(out, dtype=np.float64) + 0.5) * extent / out)
    return np.floor(origin + offsets).astype(np.int64)


def _resample_patch(pixels: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    if (h, w) == (out_h, out_w):
        return pixels.copy()
    rows = nearest_indices(0.0, float(h), out_h)
    cols = nearest_indices(0.0, float(w), out_w)
    return kernels.gather_pixels(pixels, rows, cols)


def crop_region(
    image: np.ndarray,
    box: Box,
    out_w: int = DEFAULT_CROP_SIZE,
    out_h: int = DEFAULT_CROP_SIZE,
    *,
    source_image_id: int = -1,
    category_id: Optional[int] = None,
) -> Optional[CropPatch]:
    """Resample a box region to out_w x out_h by nearest neighbor.

    Boxes narrower or shorter than 2 px are skipped (returns None with a
    warning); boxes outside the image raise MosaicError. Fractional box
    coordinates floor to pixel indices.
    """
    height, width = image.shape[:2]
    if box.x_min < 0 or box.y_min < 0 or box.x_max > width or box.y_max > height:
        raise MosaicError(
            f"box {box.as_tuple()} outside image bounds {width}x{height}"
        )
    if box.width < MIN_BOX_EXTENT or box.height < MIN_BOX_EXTENT:
        logger.warning(
            "skipping box %s on image %d: smaller than %dx%d px",
            box.as_tuple(), source_image_id, int(MIN_BOX_EXTENT), int(MIN_BOX_EXTENT),
        )
        return None
    rows = nearest_indices(box.y_min, box.height, out_h)
    cols = nearest_indices(box.x_min, box.width, out_w)
    pixels = kernels.gather_pixels(image, rows, cols)
    return CropPatch(
        pixels=pixels,
        source_image_id=source_image_id,
        source_box=box,
        category_id=category_id,
    )


def partition_pool(n_boxes: int, g: int) -> tuple[int, int]:
    """How many g x g canvases a pool needs and how many cells stay black."""
    if n_boxes < 1:
        raise MosaicError(f"pool must contain at least one box, got {n_boxes}")
    if g < 2:
        raise MosaicError(f"grid dimension must be >= 2, got {g}")
    n_canvases = ceil(n_boxes / (g * g))
    return n_canvases, n_canvases * g * g - n_boxes


def assemble_canvas(
    crops: Sequence[CropPatch], grid: GridSpec, rng: np.random.Generator
) -> MosaicCanvas:
    """Scatter crops over the grid cells of a black canvas.

    Cell assignment is a uniform random permutation of the g*g positions
    drawn from rng; crop i goes to cell perm[i]. Each crop is resampled to
    cell_size and blitted; its new label is the exact cell rectangle with the
    original category. Labels come back in crop order.
    """
    n_cells = grid.g * grid.g
    if not crops:
        raise MosaicError("cannot assemble a canvas from zero crops")
    if len(crops) > n_cells:
        raise MosaicError(
            f"{len(crops)} crops exceed the {grid.g}x{grid.g} grid capacity"
        )
    perm = rng.permutation(n_cells)
    size = grid.canvas_size
    cell = grid.cell_size
    canvas = np.zeros((size, size, 3), dtype=np.uint8)
    provenance: list[Optional[int]] = [None] * n_cells
    labels: list[LabeledBox] = []
    for i, crop in enumerate(crops):
        cell_index = int(perm[i])
        row, col = divmod(cell_index, grid.g)
        tile = _resample_patch(crop.pixels, cell, cell)
        canvas[row * cell : (row + 1) * cell, col * cell : (col + 1) * cell] = tile
        labels.append(
            LabeledBox(
                box=Box(
                    float(col * cell),
                    float(row * cell),
                    float((col + 1) * cell),
                    float((row + 1) * cell),
                ),
                category_id=crop.category_id,
                review=False,
            )
        )
        provenance[cell_index] = i
    return MosaicCanvas(
        pixels=canvas,
        labels=labels,
        grid=grid,
        crops=list(crops),
        provenance=provenance,
    )


def collect_crops(
    samples: Iterable[Sample],
    *,
    crop_size: int = DEFAULT_CROP_SIZE,
    images_root: Optional[str | Path] = None,
) -> list[CropPatch]:
    """Crop every usable labeled box of the samples, in sample-then-label order."""
    crops: list[CropPatch] = []
    for sample in samples:
        pixels = sample.pixels
        if pixels is None:
            root = Path(images_root) if images_root is not None else Path(".")
            pixels = load_image(root / sample.image_path)
        for label in sample.labels:
            patch = crop_region(
                pixels,
                label.box,
                crop_size,
                crop_size,
                source_image_id=sample.image_id,
                category_id=label.category_id,
            )
            if patch is not None:
                crops.append(patch)
    return crops


def build_canvases(
    crops: Sequence[CropPatch],
    grids: Iterable[GridSpec],
    pool_size: int,
    seed: int,
) -> list[MosaicCanvas]:
    """The shared assembly path for both online and offline modes.

    Shuffles the crops once with the seed, consumes them in pools of
    pool_size (the final pool may be short), and assembles each pool once per
    grid, ascending in g. Canvas k draws its permutation from
    default_rng(seed + k), so generation order and concurrency cannot change
    the output.
    """
    if not crops:
        raise MosaicError("no usable crops to assemble")
    if pool_size < 1:
        raise MosaicError(f"pool size must be >= 1, got {pool_size}")
    order = np.random.default_rng(seed).permutation(len(crops))
    shuffled = [crops[int(i)] for i in order]
    grid_list = sorted(grids, key=lambda grid: grid.g)
    if not grid_list:
        raise MosaicError("at least one grid is required")
    canvases: list[MosaicCanvas] = []
    canvas_index = 0
    for start in range(0, len(shuffled), pool_size):
        pool = shuffled[start : start + pool_size]
        for grid in grid_list:
            n_cells = grid.g * grid.g
            n_canvases, _ = partition_pool(len(pool), grid.g)
            for c in range(n_canvases):
                chunk = pool[c * n_cells : (c + 1) * n_cells]
                rng = np.random.default_rng(seed + canvas_index)
                canvases.append(assemble_canvas(chunk, grid, rng))
                canvas_index += 1
    return canvases


def _canvas_sample(canvas: MosaicCanvas, image_id: int, file_name: str) -> Sample:
    return Sample(
        image_id=image_id,
        image_path=file_name,
        width=canvas.grid.canvas_size,
        height=canvas.grid.canvas_size,
        labels=list(canvas.labels),
        split="train",
        pixels=canvas.pixels,
    )


def generate_offline(
    dataset: DetectionDataset,
    grids: Iterable[GridSpec],
    pool_size: int = DEFAULT_POOL_SIZE,
    seed: int = 0,
    *,
    out_dir: str | Path,
    crop_size: int = DEFAULT_CROP_SIZE,
    images_root: Optional[str | Path] = None,
) -> DetectionDataset:
    """Assemble the train split of a dataset into canvases on disk.

    Writes images/ (PNG), annotations.json, and manifest.json under out_dir
    and returns the pseudo-image dataset. Deterministic for a given
    (dataset, grids, pool_size, seed).
    """
    grid_list = sorted(grids, key=lambda grid: grid.g)
    train = [s for s in dataset.samples if s.split == "train"]
    crops = collect_crops(train, crop_size=crop_size, images_root=images_root)
    if not crops:
        raise MosaicError("train split has no usable boxes after minimum-size filtering")
    canvases = build_canvases(crops, grid_list, pool_size, seed)

    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    samples = []
    manifest_canvases = []
    for i, canvas in enumerate(canvases):
        file_name = f"images/mosaic_{i + 1:06d}.png"
        save_image(out_dir / file_name, canvas.pixels)
        samples.append(_canvas_sample(canvas, image_id=i + 1, file_name=file_name))
        cells = []
        for crop_index in canvas.provenance:
            if crop_index is None:
                cells.append(None)
            else:
                crop = canvas.crops[crop_index]
                cells.append(
                    {
                        "source_image_id": crop.source_image_id,
                        "category_id": crop.category_id,
                        "source_box": list(crop.source_box.to_xywh()),
                    }
                )
        manifest_canvases.append(
            {"file_name": file_name, "grid": canvas.grid.g, "cells": cells}
        )

    pseudo = DetectionDataset(categories=list(dataset.categories), samples=samples)
    write_annotations(pseudo, out_dir / "annotations.json")
    manifest = {
        "seed": seed,
        "grids": [grid.g for grid in grid_list],
        "pool_size": pool_size,
        "crop_size": crop_size,
        "canvas_size": grid_list[0].canvas_size if grid_list else DEFAULT_CANVAS_SIZE,
        "canvases": manifest_canvases,
    }
    atomic_write_json(out_dir / "manifest.json", manifest)
    return pseudo


def augment_batch_online(
    batch: Sequence[Sample],
    grids: Iterable[GridSpec],
    seed: int,
    *,
    pool_size: Optional[int] = None,
    crop_size: int = DEFAULT_CROP_SIZE,
    images_root: Optional[str | Path] = None,
) -> list[Sample]:
    """Extend a batch with canvases built from all of its boxes.

    Treats the batch's usable crops as one pool by default (pool_size=None)
    and builds canvases exactly as generate_offline does, so the same crops
    and seed give pixel-identical results. Returns originals followed by
    in-memory pseudo-samples; a batch without usable boxes comes back
    unchanged with a warning.
    """
    if not batch:
        raise MosaicError("batch must contain at least one sample")
    crops = collect_crops(batch, crop_size=crop_size, images_root=images_root)
    if not crops:
        logger.warning("batch has no usable boxes; returning it unchanged")
        return list(batch)
    effective_pool = len(crops) if pool_size is None else pool_size
    canvases = build_canvases(crops, grids, effective_pool, seed)
    next_id = max(sample.image_id for sample in batch) + 1
    pseudo = [
        _canvas_sample(canvas, image_id=next_id + i, file_name=f"pseudo_{next_id + i}.png")
        for i, canvas in enumerate(canvases)
    ]
    return list(batch) + pseudo
