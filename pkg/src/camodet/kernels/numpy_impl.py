"""Vectorized numpy implementations of the hot kernels.

Kept operation-for-operation identical to the numba backend so the two
paths return bitwise-equal arrays.
"""

from __future__ import annotations

import numpy as np

# Raster index exceeding any pixel index; marks background during propagation.
_SENTINEL = np.iinfo(np.int64).max


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between corner-format box arrays of shape (N, 4) and (M, 4)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])

    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def label_min_roots(foreground: np.ndarray) -> np.ndarray:
    """8-connected component labels for a boolean (H, W) mask.

    Each foreground pixel is labeled with the row-major raster index of the
    top-left-most pixel of its component; background pixels get -1.
    Implemented as iterated min-label propagation, which converges to the
    per-component minimum.
    """
    fg = np.asarray(foreground, dtype=bool)
    h, w = fg.shape
    labels = np.where(fg, np.arange(h * w, dtype=np.int64).reshape(h, w), _SENTINEL)

    while True:
        padded = np.pad(labels, 1, constant_values=_SENTINEL)
        best = labels.copy()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                np.minimum(best, padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w], out=best)
        best = np.where(fg, np.minimum(labels, best), _SENTINEL)
        if np.array_equal(best, labels):
            break
        labels = best

    return np.where(fg, labels, np.int64(-1))


def gather_pixels(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample image at the row/col index grid; output shape (len(rows), len(cols)[, C])."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if image.ndim == 2:
        return image[np.ix_(rows, cols)]
    return image[rows[:, None], cols[None, :], :]
