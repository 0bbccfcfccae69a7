"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on both backends over a few input sizes and prints the
median wall time plus the numba speedup. The first numba call per kernel is a
warmup so JIT compilation is not billed to the timings.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeats 9 --mask-sides 256,512,1024
"""

import argparse
import statistics
import time

import numpy as np

from camodet.kernels import get_backend


def _time(fn, args, repeats):
    fn(*args)  # warmup (and JIT compile on the numba side)
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def _random_boxes(rng, n):
    x0 = rng.uniform(0, 500, size=n)
    y0 = rng.uniform(0, 500, size=n)
    w = rng.uniform(1, 300, size=n)
    h = rng.uniform(1, 300, size=n)
    return np.stack([x0, y0, x0 + w, y0 + h], axis=1)


def build_cases(args, rng):
    cases = []
    for n in args.box_counts:
        boxes_a = _random_boxes(rng, n)
        boxes_b = _random_boxes(rng, n)
        cases.append((f"pairwise_iou {n}x{n}", "pairwise_iou", (boxes_a, boxes_b)))
    for side in args.mask_sides:
        mask = rng.random((side, side)) < 0.45
        cases.append((f"label_min_roots {side}x{side}", "label_min_roots", (mask,)))
    for side in args.image_sides:
        image = rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)
        rows = rng.integers(0, side, size=800)
        cols = rng.integers(0, side, size=800)
        cases.append((f"gather_pixels {side}->800", "gather_pixels", (image, rows, cols)))
    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timed runs per case (default: 5)")
    parser.add_argument("--seed", type=int, default=0, help="input RNG seed (default: 0)")
    parser.add_argument(
        "--box-counts",
        type=lambda s: [int(v) for v in s.split(",")],
        default=[200, 1000],
        help="box counts for pairwise_iou (default: 200,1000)",
    )
    parser.add_argument(
        "--mask-sides",
        type=lambda s: [int(v) for v in s.split(",")],
        default=[128, 512],
        help="mask sides for label_min_roots (default: 128,512)",
    )
    parser.add_argument(
        "--image-sides",
        type=lambda s: [int(v) for v in s.split(",")],
        default=[2048],
        help="image sides for gather_pixels (default: 2048)",
    )
    args = parser.parse_args()

    numpy_backend = get_backend("numpy")
    try:
        numba_backend = get_backend("numba")
    except ImportError:
        numba_backend = None
        print("numba backend unavailable; timing numpy only\n")

    rng = np.random.default_rng(args.seed)
    cases = build_cases(args, rng)

    header = f"{'case':<28} {'numpy':>12} {'numba':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, kernel, inputs in cases:
        t_numpy = _time(getattr(numpy_backend, kernel), inputs, args.repeats)
        if numba_backend is None:
            print(f"{label:<28} {t_numpy * 1e3:>10.2f}ms {'-':>12} {'-':>9}")
            continue
        t_numba = _time(getattr(numba_backend, kernel), inputs, args.repeats)
        agree = np.array_equal(
            getattr(numpy_backend, kernel)(*inputs), getattr(numba_backend, kernel)(*inputs)
        )
        speedup = t_numpy / t_numba if t_numba > 0 else float("inf")
        suffix = "" if agree else "  MISMATCH"
        print(
            f"{label:<28} {t_numpy * 1e3:>10.2f}ms {t_numba * 1e3:>10.2f}ms "
            f"{speedup:>8.2f}x{suffix}"
        )


if __name__ == "__main__":
    main()
