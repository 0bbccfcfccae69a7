"""COCO-style detection metrics: mAP over IoU .50:.05:.95, AP50, AP75, size
buckets, per-category AP, and a class-agnostic localization score.

Matching is greedy per image and category: detections in descending score
(ties by input order) claim the unmatched ground truth with the highest IoU
at or above the threshold (IoU ties go to the lowest ground-truth index).
Average precision is 101-point interpolated. Size buckets follow the usual
area conventions (medium [32^2, 96^2), large >= 96^2) and filter both ground
truths and detections; a bucket without ground truth is reported as absent
rather than zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from camodet.dataset import DetectionDataset
from camodet.errors import EvaluationError, InvalidBoxError
from camodet.geometry import Box, iou
from camodet.ioutils import atomic_write_json

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.array([i / 100.0 for i in range(101)])
AREA_SMALL_MAX = 32.0**2
AREA_MEDIUM_MAX = 96.0**2
AREA_BUCKETS = {
    "small": (0.0, AREA_SMALL_MAX),
    "medium": (AREA_SMALL_MAX, AREA_MEDIUM_MAX),
    "large": (AREA_MEDIUM_MAX, float("inf")),
}


@dataclass(frozen=True)
class Detection:
    image_id: int
    box: Box
    category_id: int
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise EvaluationError(f"score must be in [0, 1], got {self.score}")


@dataclass
class EvalReport:
    """All values are percentages in [0, 100], or None where undefined."""

    mean_ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_small: Optional[float]
    ap_medium: Optional[float]
    ap_large: Optional[float]
    localization: float
    per_category: dict[str, Optional[float]]

    def to_json_dict(self) -> dict:
        return {
            "mAP": self.mean_ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "APs": self.ap_small,
            "APm": self.ap_medium,
            "APl": self.ap_large,
            "localization": self.localization,
            "per_category": self.per_category,
        }

    def format(self) -> str:
        def cell(value: Optional[float]) -> str:
            return "   -" if value is None else f"{value:5.1f}"

        header = "  ".join(name.rjust(5) for name in ("mAP", "AP50", "AP75", "APm", "APl"))
        row = "  ".join(
            cell(v) for v in (self.mean_ap, self.ap50, self.ap75, self.ap_medium, self.ap_large)
        )
        lines = [header, row, f"localization  {self.localization:.1f}"]
        if self.per_category:
            width = max(len(name) for name in self.per_category)
            lines.append("per-category AP:")
            for name, value in self.per_category.items():
                lines.append(f"  {name.ljust(width)}  {cell(value).strip()}")
        return "\n".join(lines)


def match_detections(
    detections: Sequence[Detection],
    ground_truths: Sequence[Box],
    iou_threshold: float,
) -> list[bool]:
    """True/False per detection (input order): matched a ground truth or not."""
    if not 0.0 < iou_threshold <= 1.0:
        raise EvaluationError(f"iou threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    taken = [False] * len(ground_truths)
    flags = [False] * len(detections)
    for i in order:
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(ground_truths):
            if taken[j]:
                continue
            value = iou(detections[i].box, gt)
            if value >= iou_threshold and value > best_iou:
                best_iou = value
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            flags[i] = True
    return flags


def average_precision(
    assignments: Sequence[tuple[float, bool]], n_ground_truth: int
) -> Optional[float]:
    """101-point interpolated AP from (score, is_tp) pairs across the dataset.

    Pairs are sorted by descending score with ties kept in sequence order.
    Returns None when there is no ground truth (AP undefined) and 0.0 when
    there are ground truths but no detections.
    """
    if n_ground_truth < 0:
        raise EvaluationError(f"n_ground_truth must be >= 0, got {n_ground_truth}")
    if n_ground_truth == 0:
        return None
    if not assignments:
        return 0.0
    order = sorted(range(len(assignments)), key=lambda i: (-assignments[i][0], i))
    tp = np.cumsum([1.0 if assignments[i][1] else 0.0 for i in order])
    fp = np.cumsum([0.0 if assignments[i][1] else 1.0 for i in order])
    recall = tp / n_ground_truth
    precision = tp / (tp + fp)
    # Interpolated precision: max precision at any recall >= r.
    running = np.maximum.accumulate(precision[::-1])[::-1]
    cut = np.searchsorted(recall, RECALL_POINTS, side="left")
    interp = np.where(cut < len(recall), running[np.minimum(cut, len(recall) - 1)], 0.0)
    return float(np.mean(interp))


def _index_ground_truth(dataset: DetectionDataset):
    """gt[category_id][image_id] -> list of boxes; category None maps everything."""
    gt: dict[Optional[int], dict[int, list[Box]]] = {}
    for sample in dataset.samples:
        for label in sample.labels:
            for key in (label.category_id, None):
                gt.setdefault(key, {}).setdefault(sample.image_id, []).append(label.box)
    return gt


def _filter_area(boxes_or_dets, lo: float, hi: float, key=lambda item: item):
    return [item for item in boxes_or_dets if lo <= key(item).area < hi]


def _ap_at_threshold(
    detections: Sequence[Detection],
    gt_by_image: dict[int, list[Box]],
    threshold: float,
) -> Optional[float]:
    n_gt = sum(len(boxes) for boxes in gt_by_image.values())
    if n_gt == 0:
        return None
    flags = [False] * len(detections)
    by_image: dict[int, list[int]] = {}
    for i, det in enumerate(detections):
        by_image.setdefault(det.image_id, []).append(i)
    for image_id, indices in by_image.items():
        image_flags = match_detections(
            [detections[i] for i in indices], gt_by_image.get(image_id, []), threshold
        )
        for i, flag in zip(indices, image_flags):
            flags[i] = flag
    assignments = [(det.score, flags[i]) for i, det in enumerate(detections)]
    return average_precision(assignments, n_gt)


def _mean_over_thresholds(
    detections: Sequence[Detection],
    gt_by_image: dict[int, list[Box]],
    thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> Optional[float]:
    values = [_ap_at_threshold(detections, gt_by_image, t) for t in thresholds]
    if any(v is None for v in values):
        return None
    return float(np.mean(values))


def _mean_of_present(values: list[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present)) * 100.0


def coco_metrics(detections: Sequence[Detection], dataset: DetectionDataset) -> EvalReport:
    """Full metric report for detections against a dataset's labels."""
    known_images = {s.image_id for s in dataset.samples}
    known_categories = {c.id for c in dataset.categories}
    for det in detections:
        if det.image_id not in known_images:
            raise EvaluationError(f"detection references unknown image {det.image_id}")
        if det.category_id not in known_categories:
            raise EvaluationError(f"detection references unknown category {det.category_id}")

    gt = _index_ground_truth(dataset)
    det_by_cat: dict[int, list[Detection]] = {c.id: [] for c in dataset.categories}
    for det in detections:
        det_by_cat[det.category_id].append(det)

    per_category: dict[str, Optional[float]] = {}
    cat_means: list[Optional[float]] = []
    cat_ap50: list[Optional[float]] = []
    cat_ap75: list[Optional[float]] = []
    bucket_means: dict[str, list[Optional[float]]] = {name: [] for name in AREA_BUCKETS}
    for cat in dataset.categories:
        gt_map = gt.get(cat.id, {})
        dets = det_by_cat[cat.id]
        mean_ap = _mean_over_thresholds(dets, gt_map)
        per_category[cat.name] = None if mean_ap is None else mean_ap * 100.0
        cat_means.append(mean_ap)
        cat_ap50.append(_ap_at_threshold(dets, gt_map, 0.5))
        cat_ap75.append(_ap_at_threshold(dets, gt_map, 0.75))
        for name, (lo, hi) in AREA_BUCKETS.items():
            sub_gt = {
                image_id: _filter_area(boxes, lo, hi)
                for image_id, boxes in gt_map.items()
            }
            sub_gt = {k: v for k, v in sub_gt.items() if v}
            sub_dets = _filter_area(dets, lo, hi, key=lambda d: d.box)
            bucket_means[name].append(_mean_over_thresholds(sub_dets, sub_gt))

    return EvalReport(
        mean_ap=_mean_of_present(cat_means),
        ap50=_mean_of_present(cat_ap50),
        ap75=_mean_of_present(cat_ap75),
        ap_small=_mean_of_present(bucket_means["small"]),
        ap_medium=_mean_of_present(bucket_means["medium"]),
        ap_large=_mean_of_present(bucket_means["large"]),
        localization=localization_score(detections, dataset),
        per_category=per_category,
    )


def localization_score(detections: Sequence[Detection], dataset: DetectionDataset) -> float:
    """Class-agnostic AP averaged over the .50:.05:.95 thresholds, as a percent."""
    gt_map = _index_ground_truth(dataset).get(None, {})
    if not gt_map:
        raise EvaluationError("dataset has no ground-truth boxes")
    value = _mean_over_thresholds(list(detections), gt_map)
    return 0.0 if value is None else float(value) * 100.0


def read_detections(path: str | Path, dataset: DetectionDataset) -> list[Detection]:
    """Load a detections JSON list, validating ids and boxes against the dataset."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise EvaluationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise EvaluationError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise EvaluationError(f"{path}: expected a JSON list of detections")
    known_images = {s.image_id for s in dataset.samples}
    known_categories = {c.id for c in dataset.categories}
    detections = []
    for i, rec in enumerate(raw):
        try:
            image_id = int(rec["image_id"])
            category_id = int(rec["category_id"])
            x, y, w, h = (float(v) for v in rec["bbox"])
            score = float(rec["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationError(f"{path}: bad detection record {i}: {exc}") from exc
        if image_id not in known_images:
            raise EvaluationError(f"{path}: detection {i}: unknown image {image_id}")
        if category_id not in known_categories:
            raise EvaluationError(f"{path}: detection {i}: unknown category {category_id}")
        try:
            box = Box.from_xywh(x, y, w, h)
        except InvalidBoxError as exc:
            raise EvaluationError(f"{path}: detection {i}: {exc.message}") from exc
        detections.append(
            Detection(image_id=image_id, box=box, category_id=category_id, score=score)
        )
    return detections


def write_report(report: EvalReport, path: str | Path) -> None:
    atomic_write_json(path, report.to_json_dict())
