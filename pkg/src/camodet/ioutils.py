"""Atomic file writing and image loading/saving.

All writers go through a temp-file-plus-rename so an interrupted run never
leaves a partial output behind. Images are handled by Pillow; PNG, PPM, and
PGM all round-trip through it.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from camodet.errors import ImageIOError


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def load_image(path: str | Path) -> np.ndarray:
    """Load an image as an (H, W, 3) uint8 RGB array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc


def load_mask(path: str | Path) -> np.ndarray:
    """Load a mask as an (H, W) uint8 grayscale array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read mask {path}: {exc}") from exc


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    """Write an (H, W) or (H, W, 3) uint8 array as an image file, atomically."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim not in (2, 3):
        raise ImageIOError(f"expected uint8 (H, W) or (H, W, 3) pixels, got {pixels.dtype} {pixels.shape}")
    suffix = Path(path).suffix.lstrip(".").lower()
    fmt = {"png": "PNG", "ppm": "PPM", "pgm": "PPM", "": "PNG"}.get(suffix)
    if fmt is None:
        raise ImageIOError(f"unsupported image format .{suffix} for {path}")
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format=fmt)
    atomic_write_bytes(path, buf.getvalue())
