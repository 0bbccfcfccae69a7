"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the inner loops; the numpy backend is a pure
vectorized fallback. They produce bitwise-identical results. Selection is
controlled by the ``CAMODET_NUMBA`` environment variable at import time:

* unset or ``auto`` -- use numba when importable, else numpy;
* ``1`` -- require numba, fail loudly if unavailable;
* ``0`` -- force the numpy fallback.
"""

from __future__ import annotations

import logging
import os

from camodet.kernels import numpy_impl

log = logging.getLogger(__name__)

_FLAG = os.environ.get("CAMODET_NUMBA", "auto").strip().lower()


def _load_backend():
    if _FLAG in ("0", "false", "off"):
        return numpy_impl, "numpy"
    try:
        from camodet.kernels import numba_impl

        return numba_impl, "numba"
    except ImportError:
        if _FLAG in ("1", "true", "on"):
            raise
        log.warning("numba unavailable, falling back to numpy kernels")
        return numpy_impl, "numpy"


_impl, BACKEND = _load_backend()

pairwise_iou = _impl.pairwise_iou
label_min_roots = _impl.label_min_roots
gather_pixels = _impl.gather_pixels


def get_backend(name: str):
    """Return a backend module by name ('numba' or 'numpy'); used by benchmarks."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        from camodet.kernels import numba_impl

        return numba_impl
    raise ValueError(f"unknown kernel backend: {name!r}")
