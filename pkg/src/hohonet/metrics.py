"""Evaluation metrics for depth, semantic segmentation and room layout.

Reports serialize to JSON with fixed keys:

* depth: ``mre, mae, rmse, rmse_log, delta1, delta2, delta3``
* semantic: ``miou, macc, iou_per_class, acc_per_class``
* layout: ``iou2d, iou3d``

plus ``task``, ``count`` and ``flags``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .erp import LayoutGT1D

DEPTH_KEYS = ("mre", "mae", "rmse", "rmse_log", "delta1", "delta2", "delta3")
SEMANTIC_KEYS = ("miou", "macc", "iou_per_class", "acc_per_class")
LAYOUT_KEYS = ("iou2d", "iou3d")
REPORT_KEYS = {"depth": DEPTH_KEYS, "semantic": SEMANTIC_KEYS, "layout": LAYOUT_KEYS}
RASTER_RES = 2048
LOG_FLOOR = 1e-6


@dataclass
class MetricsReport:
    task: str
    values: dict
    count: int = 0
    flags: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.values[key]

    def to_json(self) -> dict:
        out = {"task": self.task, "count": self.count, "flags": list(self.flags)}
        for k in REPORT_KEYS[self.task]:
            out[k] = self.values[k]
        return out


# ---------------------------------------------------------------- depth


class DepthAccumulator:
    """Count-weighted running sums so per-sample results merge exactly."""

    def __init__(self, clip_m: float | None = None):
        self.clip_m = clip_m
        self.n = 0
        self.sums = np.zeros(4)  # abs_rel, abs, sq, sq_log10
        self.hits = np.zeros(3, dtype=np.int64)
        self.flags: set = set()

    def update(self, pred, gt) -> None:
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ValueError(f"pred {pred.shape} vs gt {gt.shape}")
        if self.clip_m is not None:
            pred = np.minimum(pred, self.clip_m)
            gt = np.minimum(gt, self.clip_m)
        valid = gt > 0
        p, g = pred[valid], gt[valid]
        if p.size == 0:
            return
        err = p - g
        if np.any(p <= 0):
            self.flags.add("nonpositive_pred_clamped")
        pl = np.maximum(p, LOG_FLOOR)
        ratio = np.maximum(pl / g, g / pl)
        self.sums += [
            np.sum(np.abs(err) / g),
            np.sum(np.abs(err)),
            np.sum(err**2),
            np.sum((np.log10(pl) - np.log10(g)) ** 2),
        ]
        for k in range(3):
            self.hits[k] += int(np.sum(ratio < 1.25 ** (k + 1)))
        self.n += p.size

    def report(self) -> MetricsReport:
        if self.n == 0:
            raise ValueError("depth metrics: no valid pixels")
        mre, mae, mse, msl = self.sums / self.n
        vals = {
            "mre": float(mre),
            "mae": float(mae),
            "rmse": float(math.sqrt(mse)),
            "rmse_log": float(math.sqrt(msl)),
        }
        for k in range(3):
            vals[f"delta{k + 1}"] = float(self.hits[k] / self.n)
        return MetricsReport("depth", vals, self.n, sorted(self.flags))


def depth_metrics(pred, gt, clip_m: float | None = None) -> MetricsReport:
    """MRE, MAE, RMSE, RMSE(log10) and delta accuracies over pixels with gt > 0.

    With ``clip_m`` both maps are clipped to that many metres first.
    """
    acc = DepthAccumulator(clip_m)
    acc.update(pred, gt)
    return acc.report()


# ---------------------------------------------------------------- semantic


class SegAccumulator:
    def __init__(self, num_classes: int):
        self.k = num_classes
        self.conf = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred_labels, gt_labels) -> None:
        p = np.asarray(pred_labels).reshape(-1).astype(np.int64)
        g = np.asarray(gt_labels).reshape(-1).astype(np.int64)
        if p.shape != g.shape:
            raise ValueError("label maps differ in size")
        if p.size and (min(p.min(), g.min()) < 0 or max(p.max(), g.max()) >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        self.conf += np.bincount(g * self.k + p, minlength=self.k * self.k).reshape(self.k, self.k)

    def report(self) -> MetricsReport:
        total = int(self.conf.sum())
        if total == 0:
            raise ValueError("semantic metrics: empty input")
        tp = np.diag(self.conf).astype(np.float64)
        gt_count = self.conf.sum(axis=1)
        pred_count = self.conf.sum(axis=0)
        present = gt_count > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = tp / (gt_count + pred_count - tp)
            acc = tp / gt_count
        vals = {
            "miou": float(iou[present].mean()),
            "macc": float(acc[present].mean()),
            "iou_per_class": [float(v) if p else None for v, p in zip(iou, present)],
            "acc_per_class": [float(v) if p else None for v, p in zip(acc, present)],
        }
        return MetricsReport("semantic", vals, total)


def seg_metrics(pred_labels, gt_labels, num_classes: int) -> MetricsReport:
    """Class-wise IoU and accuracy; means cover only classes present in gt."""
    acc = SegAccumulator(num_classes)
    acc.update(pred_labels, gt_labels)
    return acc.report()


# ---------------------------------------------------------------- polygons


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1, d2 = _cross(q1, q2, p1), _cross(q1, q2, p2)
    d3, d4 = _cross(p1, p2, q1), _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    for d, a, b, c in ((d1, q1, q2, p1), (d2, q1, q2, p2), (d3, p1, p2, q1), (d4, p1, p2, q2)):
        if d == 0 and on_seg(a, b, c):
            return True
    return False


def is_simple(poly) -> bool:
    p = np.asarray(poly, dtype=np.float64)
    n = len(p)
    if n < 3 or abs(polygon_area(p)) == 0:
        return False
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]):
                return False
    return True


def is_convex(poly) -> bool:
    p = np.asarray(poly, dtype=np.float64)
    n = len(p)
    signs = {np.sign(_cross(p[i], p[(i + 1) % n], p[(i + 2) % n])) for i in range(n)}
    signs.discard(0.0)
    return len(signs) <= 1


def _ccw(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=np.float64)
    return p if polygon_area(p) > 0 else p[::-1]


def clip_convex(subject, clipper) -> np.ndarray:
    """Sutherland-Hodgman: part of ``subject`` inside convex CCW ``clipper``."""
    out = [tuple(v) for v in subject]
    m = len(clipper)
    for i in range(m):
        a, b = clipper[i], clipper[(i + 1) % m]
        inp, out = out, []
        if not inp:
            break
        for j in range(len(inp)):
            cur, prev = inp[j], inp[j - 1]
            cin = _cross(a, b, cur) >= 0
            pin = _cross(a, b, prev) >= 0
            if cin:
                if not pin:
                    out.append(_intersect(prev, cur, a, b))
                out.append(cur)
            elif pin:
                out.append(_intersect(prev, cur, a, b))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, a, b):
    dp = (q[0] - p[0], q[1] - p[1])
    da = (b[0] - a[0], b[1] - a[1])
    denom = dp[0] * da[1] - dp[1] * da[0]
    t = ((a[0] - p[0]) * da[1] - (a[1] - p[1]) * da[0]) / denom
    return (p[0] + t * dp[0], p[1] + t * dp[1])


def _inside(poly, xs, ys) -> np.ndarray:
    """Even-odd point-in-polygon test on a grid of points."""
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        cond = (y1 > ys) != (y2 > ys)
        xint = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (xs < xint)
    return inside


def raster_intersection_area(a, b, res: int = RASTER_RES) -> float:
    """Intersection area by counting pixel centres of a res x res grid on the joint bbox."""
    pts = np.vstack([a, b])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    step = (hi - lo) / res
    xs = lo[0] + (np.arange(res) + 0.5) * step[0]
    ys = lo[1] + (np.arange(res) + 0.5) * step[1]
    gx, gy = np.meshgrid(xs, ys)
    both = _inside(a, gx, gy) & _inside(b, gx, gy)
    return float(both.sum() * step[0] * step[1])


def polygon_intersection_area(a, b) -> float:
    a, b = _ccw(a), _ccw(b)
    if is_convex(a) and is_convex(b):
        inter = clip_convex(a, b)
        return abs(polygon_area(inter)) if len(inter) >= 3 else 0.0
    return raster_intersection_area(a, b)


def layout_iou(pred_corners, gt_corners, pred_heights, gt_heights) -> tuple[float, float]:
    """(2-D floor-plan IoU, 3-D prism IoU) of two gravity-aligned rooms.

    Heights are (floor_z, ceil_z). Convex pairs are clipped exactly; other
    pairs are rasterized at 2048 x 2048 over their joint bounding box.
    """
    for name, poly in (("pred", pred_corners), ("gt", gt_corners)):
        if not is_simple(poly):
            raise ValueError(f"{name} polygon is not simple")
    area_p = abs(polygon_area(pred_corners))
    area_g = abs(polygon_area(gt_corners))
    inter = polygon_intersection_area(pred_corners, gt_corners)
    iou2d = inter / (area_p + area_g - inter)
    fp, cp = pred_heights
    fg, cg = gt_heights
    hp, hg = cp - fp, cg - fg
    if hp <= 0 or hg <= 0:
        raise ValueError("ceiling must be above floor")
    overlap = max(0.0, min(cp, cg) - max(fp, fg))
    vi = inter * overlap
    iou3d = vi / (area_p * hp + area_g * hg - vi)
    return float(iou2d), float(iou3d)


# ---------------------------------------------------------------- 1-D layout -> corners


def _row_to_lat(v, H: int):
    return np.pi / 2 - np.pi * (np.asarray(v) + 0.5) / H


def find_corner_columns(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Fractional columns of circular local maxima above ``threshold``.

    A flat two-sample peak counts once. Each peak is refined by fitting a
    parabola to log-probability over its three neighbours (exact for
    Gaussian-shaped peaks).
    """
    p = np.asarray(prob, dtype=np.float64)
    left, right = np.roll(p, 1), np.roll(p, -1)
    cols = np.nonzero((p > threshold) & (p >= left) & (p > right))[0]
    W = len(p)
    out = []
    for u in cols:
        trio = np.array([left[u], p[u], right[u]])
        off = 0.0
        if np.all(trio > 0):
            l0, l1, l2 = np.log(trio)
            den = l0 - 2 * l1 + l2
            if den < 0:
                off = float(np.clip(0.5 * (l0 - l2) / den, -1.0, 1.0))
        out.append((u + off) % W)
    return np.array(out)


def _wall_points(layout: LayoutGT1D, H: int, W: int, cam_height: float) -> np.ndarray:
    phi = 2 * np.pi * (np.arange(W) + 0.5) / W - np.pi
    th_f = _row_to_lat(layout.floor_v, H)
    with np.errstate(divide="ignore"):
        dist = cam_height / np.tan(np.maximum(-th_f, 1e-6))
    return np.stack([dist * np.cos(phi), dist * np.sin(phi)], axis=-1), dist


def _fit_line(pts: np.ndarray):
    """Total-least-squares line: (centroid, unit direction)."""
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c)
    return c, vt[0]


def _corner_point(pts: np.ndarray, u: float, span: int = 3):
    W = len(pts)
    u0 = int(np.floor(u))
    left = pts[[(u0 - k) % W for k in range(span)]]
    right = pts[[(u0 + 1 + k) % W for k in range(span)]]
    (c1, d1), (c2, d2) = _fit_line(left), _fit_line(right)
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 0.1:
        return None
    diff = c2 - c1
    t = (diff[0] * d2[1] - diff[1] * d2[0]) / den
    return c1 + t * d1


def layout_1d_to_corners(layout: LayoutGT1D, H: int, W: int, cam_height: float):
    """Floor corners (camera-centred xy, sorted by longitude) and (floor_z, ceil_z).

    Floor-boundary rows become wall points at distance cam_height / tan(-theta).
    Each corner is the intersection of the wall lines fitted to the three
    columns on either side of a corner peak; if those lines are nearly
    parallel the wall point along the peak longitude is used instead.
    Heights are measured from the floor, so floor_z is 0; the ceiling height
    is the mean over all columns.
    """
    cols = find_corner_columns(layout.corner_prob)
    if len(cols) < 3:
        raise ValueError(f"fewer than 3 corners detected ({len(cols)})")
    if np.any(_row_to_lat(layout.floor_v, H) >= 0):
        raise ValueError("floor boundary must lie below the horizon in every column")
    pts, dist = _wall_points(layout, H, W, cam_height)
    corners = []
    for u in cols:
        c = _corner_point(pts, u)
        if c is None:
            phi = 2 * np.pi * (u + 0.5) / W - np.pi
            d = float(np.interp(u, np.arange(-1, W + 1), np.r_[dist[-1], dist, dist[0]]))
            c = np.array([d * math.cos(phi), d * math.sin(phi)])
        corners.append(c)
    corners.sort(key=lambda c: math.atan2(c[1], c[0]))
    ceil_h = float(np.mean(dist * np.tan(_row_to_lat(layout.ceil_v, H))))
    return np.array(corners), (0.0, cam_height + ceil_h)
