"""Axis-aligned box arithmetic: IoU, GIoU, and rectangle-to-rectangle remapping.

Coordinates are continuous pixel positions, min-corner inclusive and
max-corner exclusive, so ``area == (x_max - x_min) * (y_max - y_min)`` holds
exactly. Degenerate boxes (zero width or height) are rejected at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from camodet.errors import InvalidBoxError


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle (x_min, y_min, x_max, y_max) with positive extent."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in coords):
            raise InvalidBoxError(f"non-finite box coordinates {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"box must have positive width and height, got {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def to_xywh(self) -> tuple[float, float, float, float]:
        """COCO-style (x, y, width, height)."""
        return (self.x_min, self.y_min, self.width, self.height)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes, symmetric in its arguments."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the empty fraction of the smallest enclosing box.

    Lies in (-1, 1]; equals plain IoU when the enclosing box is exactly the
    union, and 1 only when the boxes coincide.
    """
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
    union = a.area + b.area - inter
    enclose = (max(a.x_max, b.x_max) - min(a.x_min, b.x_min)) * (
        max(a.y_max, b.y_max) - min(a.y_min, b.y_min)
    )
    return inter / union - (enclose - union) / enclose


@dataclass(frozen=True)
class RectTransform:
    """Per-axis linear map taking the source rectangle onto the target rectangle."""

    source: Box
    target: Box

    def inverse(self) -> "RectTransform":
        return RectTransform(self.target, self.source)


def transform_box(transform: RectTransform, box: Box) -> Box:
    """Map a box through the transform; the input need not lie inside the source."""
    s, t = transform.source, transform.target
    sx = t.width / s.width
    sy = t.height / s.height
    return Box(
        t.x_min + (box.x_min - s.x_min) * sx,
        t.y_min + (box.y_min - s.y_min) * sy,
        t.x_min + (box.x_max - s.x_min) * sx,
        t.y_min + (box.y_max - s.y_min) * sy,
    )


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 corner array (empty input gives (0, 4))."""
    rows = [b.as_tuple() for b in boxes]
    if not rows:
        return np.empty((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)
