"""Detection dataset model, mask-to-box conversion, and COCO-flavored JSON I/O.

The on-disk format keeps the usual ``images`` / ``annotations`` /
``categories`` top-level keys with boxes stored as ``[x, y, width, height]``;
each image record additionally carries a ``split`` field ("train" or "test")
and each annotation a ``review`` flag marking boxes that may be fragments of
an occlusion-split object.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from camodet import kernels
from camodet.errors import AnnotationError, InvalidBoxError
from camodet.geometry import Box
from camodet.ioutils import atomic_write_json

SPLITS = ("train", "test")
DEFAULT_MASK_THRESHOLD = 128


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class LabeledBox:
    """A box with its class id; ``review`` flags boxes needing manual inspection."""

    box: Box
    category_id: Optional[int] = None
    review: bool = False


@dataclass
class Sample:
    """One image with its labels; ``pixels`` may hold in-memory image data."""

    image_id: int
    image_path: str
    width: int
    height: int
    labels: list[LabeledBox] = field(default_factory=list)
    split: str = "train"
    pixels: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass
class DetectionDataset:
    categories: list[Category] = field(default_factory=list)
    samples: list[Sample] = field(default_factory=list)

    def category_by_id(self) -> dict[int, Category]:
        return {c.id: c for c in self.categories}

    def validate(self) -> None:
        """Check dataset invariants, raising AnnotationError naming the offender."""
        ids = [c.id for c in self.categories]
        if len(set(ids)) != len(ids):
            raise AnnotationError("duplicate category ids in category table")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise AnnotationError("duplicate category names in category table")
        for cat in self.categories:
            if cat.id < 1:
                raise AnnotationError(f"category id must be >= 1, got {cat.id} ({cat.name!r})")
            if not cat.name:
                raise AnnotationError(f"category {cat.id} has an empty name")

        known = set(ids)
        seen_images = set()
        for sample in self.samples:
            if sample.image_id in seen_images:
                raise AnnotationError(f"duplicate image id {sample.image_id}")
            seen_images.add(sample.image_id)
            if sample.width < 1 or sample.height < 1:
                raise AnnotationError(
                    f"image {sample.image_id}: dimensions must be >= 1, got {sample.width}x{sample.height}"
                )
            if sample.split not in SPLITS:
                raise AnnotationError(f"image {sample.image_id}: unknown split {sample.split!r}")
            for label in sample.labels:
                if label.category_id not in known:
                    raise AnnotationError(
                        f"image {sample.image_id}: unknown category {label.category_id}"
                    )
                b = label.box
                if b.x_min < 0 or b.y_min < 0 or b.x_max > sample.width or b.y_max > sample.height:
                    raise AnnotationError(
                        f"image {sample.image_id}: box {b.as_tuple()} outside "
                        f"image bounds {sample.width}x{sample.height}"
                    )


def connected_components(mask: np.ndarray, threshold: int = DEFAULT_MASK_THRESHOLD) -> list[np.ndarray]:
    """8-connected components of pixels with intensity >= threshold.

    Returns one (N, 2) array of (row, col) coordinates per component, ordered
    by each component's top-left-most pixel in row-major order; coordinates
    within a component are in raster order.
    """
    if not 1 <= threshold <= 255:
        raise ValueError(f"threshold must be in [1, 255], got {threshold}")
    mask = np.asarray(mask)
    labels = kernels.label_min_roots(mask >= threshold)
    flat = labels.ravel()
    fg_idx = np.flatnonzero(flat >= 0)
    if fg_idx.size == 0:
        return []
    order = np.argsort(flat[fg_idx], kind="stable")
    sorted_idx = fg_idx[order]
    sorted_vals = flat[fg_idx][order]
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    width = mask.shape[1]
    return [
        np.stack([grp // width, grp % width], axis=1)
        for grp in np.split(sorted_idx, boundaries)
    ]


def mask_to_boxes(mask: np.ndarray, threshold: int = DEFAULT_MASK_THRESHOLD) -> list[LabeledBox]:
    """Extremal bounding box of every connected component of a grayscale mask.

    Box edges are the furthest foreground rows/columns of the component, with
    the exclusive max convention (max pixel index + 1). When the mask splits
    into more than one component, every emitted box is flagged ``review=True``
    since occlusion may have fragmented a single object.
    """
    components = connected_components(mask, threshold)
    review = len(components) > 1
    boxes = []
    for coords in components:
        rows, cols = coords[:, 0], coords[:, 1]
        box = Box(
            float(cols.min()),
            float(rows.min()),
            float(cols.max() + 1),
            float(rows.max() + 1),
        )
        boxes.append(LabeledBox(box=box, category_id=None, review=review))
    return boxes


def _box_gap(a: Box, b: Box) -> float:
    """Per-axis separation between two boxes: 0 when they touch or overlap."""
    gap_x = max(a.x_min, b.x_min) - min(a.x_max, b.x_max)
    gap_y = max(a.y_min, b.y_min) - min(a.y_max, b.y_max)
    return max(gap_x, gap_y, 0.0)


def _hull(boxes: Sequence[Box]) -> Box:
    return Box(
        min(b.x_min for b in boxes),
        min(b.y_min for b in boxes),
        max(b.x_max for b in boxes),
        max(b.y_max for b in boxes),
    )


def merge_boxes(boxes: Sequence[LabeledBox], max_gap: float) -> list[LabeledBox]:
    """Merge boxes of the same category whose gap is at most ``max_gap``.

    Merging repeats until no two result hulls are within the gap, so the
    output is stable under re-application. Merged boxes carry review=True;
    output order follows the earliest input index in each merged group.
    """
    if max_gap < 0:
        raise ValueError(f"max_gap must be >= 0, got {max_gap}")
    # (box, category, review, min original index)
    current = [(lb.box, lb.category_id, lb.review, i) for i, lb in enumerate(boxes)]
    while True:
        merged_any = False
        result: list[tuple[Box, Optional[int], bool, int]] = []
        for box, cat, review, idx in current:
            target = None
            for j, (obox, ocat, _, _) in enumerate(result):
                if ocat == cat and _box_gap(box, obox) <= max_gap:
                    target = j
                    break
            if target is None:
                result.append((box, cat, review, idx))
            else:
                obox, ocat, orev, oidx = result[target]
                result[target] = (_hull([obox, box]), ocat, True, min(oidx, idx))
                merged_any = True
        current = result
        if not merged_any:
            break
    current.sort(key=lambda item: item[3])
    return [LabeledBox(box=b, category_id=c, review=r) for b, c, r, _ in current]


def read_annotations(path: str | Path) -> DetectionDataset:
    """Load and validate a dataset from a COCO-flavored JSON file."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise AnnotationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON in {path}: {exc}") from exc

    for key in ("images", "annotations", "categories"):
        if key not in raw:
            raise AnnotationError(f"{path}: missing top-level key {key!r}")

    try:
        categories = [Category(id=int(c["id"]), name=str(c["name"])) for c in raw["categories"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"{path}: bad category record: {exc}") from exc

    samples: dict[int, Sample] = {}
    order: list[int] = []
    for rec in raw["images"]:
        try:
            sample = Sample(
                image_id=int(rec["id"]),
                image_path=str(rec["file_name"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
                split=str(rec.get("split", "train")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{path}: bad image record {rec!r}: {exc}") from exc
        samples[sample.image_id] = sample
        order.append(sample.image_id)

    for rec in raw["annotations"]:
        ann_id = rec.get("id", "?")
        try:
            image_id = int(rec["image_id"])
            category_id = int(rec["category_id"])
            x, y, w, h = (float(v) for v in rec["bbox"])
            review = bool(rec.get("review", False))
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{path}: bad annotation {ann_id}: {exc}") from exc
        if image_id not in samples:
            raise AnnotationError(f"{path}: annotation {ann_id}: unknown image {image_id}")
        try:
            box = Box.from_xywh(x, y, w, h)
        except InvalidBoxError as exc:
            raise AnnotationError(f"{path}: annotation {ann_id}: {exc.message}") from exc
        samples[image_id].labels.append(LabeledBox(box=box, category_id=category_id, review=review))

    dataset = DetectionDataset(categories=categories, samples=[samples[i] for i in order])
    try:
        dataset.validate()
    except AnnotationError as exc:
        raise AnnotationError(f"{path}: {exc.message}") from exc
    return dataset


def write_annotations(dataset: DetectionDataset, path: str | Path) -> None:
    """Validate and atomically write a dataset as COCO-flavored JSON."""
    dataset.validate()
    images = []
    annotations = []
    ann_id = 1
    for sample in dataset.samples:
        images.append(
            {
                "id": sample.image_id,
                "file_name": sample.image_path,
                "width": sample.width,
                "height": sample.height,
                "split": sample.split,
            }
        )
        for label in sample.labels:
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": sample.image_id,
                    "category_id": label.category_id,
                    "bbox": list(label.box.to_xywh()),
                    "review": label.review,
                }
            )
            ann_id += 1
    payload = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": c.id, "name": c.name} for c in sorted(dataset.categories, key=lambda c: c.id)],
    }
    atomic_write_json(path, payload)


@dataclass
class DatasetSummary:
    n_categories: int
    n_train_images: int
    n_test_images: int
    n_boxes: int
    per_category: dict[str, int]

    def format(self) -> str:
        lines = [
            f"categories    {self.n_categories}",
            f"train images  {self.n_train_images}",
            f"test images   {self.n_test_images}",
            f"boxes         {self.n_boxes}",
        ]
        if self.per_category:
            width = max(len(name) for name in self.per_category)
            lines.append("per-category box counts:")
            for name, count in self.per_category.items():
                lines.append(f"  {name.ljust(width)}  {count}")
        return "\n".join(lines)


def dataset_summary(dataset: DetectionDataset) -> DatasetSummary:
    """Counts of categories, train/test images, and boxes (total and per category)."""
    names = {c.id: c.name for c in dataset.categories}
    counts: Counter[str] = Counter()
    n_boxes = 0
    for sample in dataset.samples:
        for label in sample.labels:
            n_boxes += 1
            counts[names.get(label.category_id, str(label.category_id))] += 1
    return DatasetSummary(
        n_categories=len(dataset.categories),
        n_train_images=sum(1 for s in dataset.samples if s.split == "train"),
        n_test_images=sum(1 for s in dataset.samples if s.split == "test"),
        n_boxes=n_boxes,
        per_category={name: counts.get(name, 0) for name in sorted(names.values())},
    )
