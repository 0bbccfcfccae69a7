"""Numba-compiled implementations of the hot kernels.

Same contracts and bitwise-identical outputs as ``numpy_impl``; the inner
loops are JIT-compiled with on-disk caching so compilation is paid once.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _pairwise_iou_kernel(a, b, out):
    n, m = a.shape[0], b.shape[0]
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            union = area_a + area_b - inter
            out[i, j] = inter / union


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between corner-format box arrays of shape (N, 4) and (M, 4)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    _pairwise_iou_kernel(a, b, out)
    return out


@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


@njit(cache=True)
def _union_by_min(parent, i, j):
    ri = _find(parent, i)
    rj = _find(parent, j)
    if ri < rj:
        parent[rj] = ri
    elif rj < ri:
        parent[ri] = rj


@njit(cache=True)
def _label_kernel(fg):
    h, w = fg.shape
    parent = np.empty(h * w, dtype=np.int64)
    for r in range(h):
        for c in range(w):
            i = r * w + c
            parent[i] = i
            if not fg[r, c]:
                continue
            if c > 0 and fg[r, c - 1]:
                _union_by_min(parent, i, i - 1)
            if r > 0:
                if fg[r - 1, c]:
                    _union_by_min(parent, i, i - w)
                if c > 0 and fg[r - 1, c - 1]:
                    _union_by_min(parent, i, i - w - 1)
                if c + 1 < w and fg[r - 1, c + 1]:
                    _union_by_min(parent, i, i - w + 1)
    labels = np.full((h, w), -1, dtype=np.int64)
    for r in range(h):
        for c in range(w):
            if fg[r, c]:
                labels[r, c] = _find(parent, r * w + c)
    return labels


def label_min_roots(foreground: np.ndarray) -> np.ndarray:
    """8-connected component labels for a boolean (H, W) mask.

    Each foreground pixel is labeled with the row-major raster index of the
    top-left-most pixel of its component; background pixels get -1.
    Union-find with union-by-minimum keeps each root at the component minimum.
    """
    fg = np.ascontiguousarray(np.asarray(foreground, dtype=bool), dtype=np.uint8)
    return _label_kernel(fg)


@njit(cache=True)
def _gather2(image, rows, cols, out):
    for i in range(rows.shape[0]):
        for j in range(cols.shape[0]):
            out[i, j] = image[rows[i], cols[j]]


@njit(cache=True)
def _gather3(image, rows, cols, out):
    for i in range(rows.shape[0]):
        for j in range(cols.shape[0]):
            for k in range(image.shape[2]):
                out[i, j, k] = image[rows[i], cols[j], k]


def gather_pixels(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample image at the row/col index grid; output shape (len(rows), len(cols)[, C])."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    image = np.ascontiguousarray(image)
    if image.ndim == 2:
        out = np.empty((rows.shape[0], cols.shape[0]), dtype=image.dtype)
        _gather2(image, rows, cols, out)
    else:
        out = np.empty((rows.shape[0], cols.shape[0], image.shape[2]), dtype=image.dtype)
        _gather3(image, rows, cols, out)
    return out
