"""Independent reference implementations that pin test expectations.

Everything here is written from first principles with plain loops and shares
no code with the package, so agreement between the two is meaningful. Fixture
coordinates are kept integer-valued so both sides compute identical floats
and exact equality assertions are safe.
"""

from __future__ import annotations

import numpy as np

RECALL_GRID = [i / 100.0 for i in range(101)]
THRESHOLD_GRID = [round(0.5 + 0.05 * k, 2) for k in range(10)]
BUCKETS = {
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}


def flood_components(mask, threshold=128):
    """8-connected components by BFS, ordered by first pixel in raster order."""
    fg = np.asarray(mask) >= threshold
    h, w = fg.shape
    seen = np.zeros((h, w), dtype=bool)
    components = []
    for r in range(h):
        for c in range(w):
            if not fg[r, c] or seen[r, c]:
                continue
            queue = [(r, c)]
            seen[r, c] = True
            coords = []
            while queue:
                y, x = queue.pop()
                coords.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            components.append(np.array(sorted(coords), dtype=np.int64))
    return components


def extremal_boxes(mask, threshold=128):
    """One (x_min, y_min, x_max, y_max) per component via exhaustive scan."""
    boxes = []
    for coords in flood_components(mask, threshold):
        rows = [int(p[0]) for p in coords]
        cols = [int(p[1]) for p in coords]
        boxes.append(
            (float(min(cols)), float(min(rows)), float(max(cols) + 1), float(max(rows) + 1))
        )
    return boxes


def nearest_resample(src, out_h, out_w):
    """Nearest-neighbor resample using the half-pixel floor rule."""
    h, w = src.shape[:2]
    rows = np.array([int(np.floor((v + 0.5) * h / out_h)) for v in range(out_h)])
    cols = np.array([int(np.floor((u + 0.5) * w / out_w)) for u in range(out_w)])
    return src[rows][:, cols]


def box_iou(a, b):
    """IoU of two (x0, y0, x1, y1) tuples; plain arithmetic."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def greedy_match(dets, gts, threshold):
    """dets: (score, box) in input order; returns TP flags in input order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][0], i))
    used = [False] * len(gts)
    flags = [False] * len(dets)
    for i in order:
        best, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if used[j]:
                continue
            value = box_iou(dets[i][1], gt)
            if value >= threshold and value > best:
                best, best_j = value, j
        if best_j >= 0:
            used[best_j] = True
            flags[i] = True
    return flags


def ap_101(pairs, n_gt):
    """101-point interpolated AP from (score, is_tp) pairs; None without GT."""
    if n_gt == 0:
        return None
    if not pairs:
        return 0.0
    order = sorted(range(len(pairs)), key=lambda i: (-pairs[i][0], i))
    tp = fp = 0
    recalls, precisions = [], []
    for i in order:
        if pairs[i][1]:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (tp + fp))
    interp = []
    for r in RECALL_GRID:
        best = 0.0
        for k in range(len(recalls)):
            if recalls[k] >= r and precisions[k] > best:
                best = precisions[k]
        interp.append(best)
    return float(np.mean(interp))


def category_ap(dets, gts, threshold):
    """dets: (image_id, score, box) input order; gts: (image_id, box)."""
    n_gt = len(gts)
    if n_gt == 0:
        return None
    flags = [False] * len(dets)
    for image_id in {d[0] for d in dets}:
        idxs = [i for i, d in enumerate(dets) if d[0] == image_id]
        sub = [(dets[i][1], dets[i][2]) for i in idxs]
        sub_gt = [g[1] for g in gts if g[0] == image_id]
        for i, flag in zip(idxs, greedy_match(sub, sub_gt, threshold)):
            flags[i] = flag
    return ap_101([(dets[i][1], flags[i]) for i in range(len(dets))], n_gt)


def mean_ap(dets, gts):
    values = [category_ap(dets, gts, t) for t in THRESHOLD_GRID]
    if any(v is None for v in values):
        return None
    return float(np.mean(values))


def _area(box):
    return (box[2] - box[0]) * (box[3] - box[1])


def _mean_present(values):
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present)) * 100.0


def make_eval_fixture(rng):
    """Random integer-coordinate evaluation scenario.

    Returns (categories, gt_records, det_records) with categories as
    (id, name) pairs, gt_records as (image_id, category_id, box), det_records
    as (image_id, category_id, box, score). Boxes are integer-valued tuples
    spanning all three area buckets; scores are sixteenths, so every float is
    exactly representable and equality checks are safe.
    """
    n_images = int(rng.integers(1, 4))
    n_categories = int(rng.integers(1, 3))
    categories = [(k + 1, f"cat{k + 1}") for k in range(n_categories)]
    size_ranges = [(4, 30), (33, 90), (97, 140)]

    def random_box():
        lo, hi = size_ranges[int(rng.integers(3))]
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        x = int(rng.integers(0, 200))
        y = int(rng.integers(0, 200))
        return (float(x), float(y), float(x + w), float(y + h))

    gt_records = []
    for image_id in range(1, n_images + 1):
        for _ in range(int(rng.integers(0, 5))):
            cat = int(rng.integers(1, n_categories + 1))
            gt_records.append((image_id, cat, random_box()))
    if not gt_records:
        gt_records.append((1, 1, random_box()))

    det_records = []
    for image_id in range(1, n_images + 1):
        image_gts = [g for g in gt_records if g[0] == image_id]
        for _ in range(int(rng.integers(0, 6))):
            score = int(rng.integers(1, 17)) / 16.0
            if image_gts and rng.random() < 0.6:
                _, cat, (x0, y0, x1, y1) = image_gts[int(rng.integers(len(image_gts)))]
                dx, dy = (int(v) for v in rng.integers(-8, 9, size=2))
                box = (
                    float(max(0, x0 + dx)),
                    float(max(0, y0 + dy)),
                    float(max(0, x0 + dx) + (x1 - x0)),
                    float(max(0, y0 + dy) + (y1 - y0)),
                )
                if rng.random() < 0.2:
                    cat = int(rng.integers(1, n_categories + 1))
                det_records.append((image_id, cat, box, score))
            else:
                cat = int(rng.integers(1, n_categories + 1))
                det_records.append((image_id, cat, random_box(), score))
    return categories, gt_records, det_records


def full_report(dets, gts, categories):
    """Whole-report oracle.

    dets: (image_id, category_id, box, score) in input order;
    gts: (image_id, category_id, box); categories: (id, name) pairs.
    Returns a dict shaped like EvalReport.to_json_dict().
    """
    per_category = {}
    means, ap50s, ap75s = [], [], []
    bucket_values = {name: [] for name in BUCKETS}
    for cid, name in categories:
        d = [(r[0], r[3], r[2]) for r in dets if r[1] == cid]
        g = [(r[0], r[2]) for r in gts if r[1] == cid]
        value = mean_ap(d, g)
        per_category[name] = None if value is None else value * 100.0
        means.append(value)
        ap50s.append(category_ap(d, g, 0.5))
        ap75s.append(category_ap(d, g, 0.75))
        for bucket, (lo, hi) in BUCKETS.items():
            db = [r for r in d if lo <= _area(r[2]) < hi]
            gb = [r for r in g if lo <= _area(r[1]) < hi]
            bucket_values[bucket].append(mean_ap(db, gb))
    localization = mean_ap(
        [(r[0], r[3], r[2]) for r in dets], [(r[0], r[2]) for r in gts]
    )
    return {
        "mAP": _mean_present(means),
        "AP50": _mean_present(ap50s),
        "AP75": _mean_present(ap75s),
        "APs": _mean_present(bucket_values["small"]),
        "APm": _mean_present(bucket_values["medium"]),
        "APl": _mean_present(bucket_values["large"]),
        "localization": 0.0 if localization is None else localization * 100.0,
        "per_category": per_category,
    }
