"""Image-quality and segmentation metrics plus a small report container.

Undefined values (HD95 of an empty mask) are ``None``; a perfect PSNR is
``math.inf``. Neither is ever encoded as NaN.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from scipy.spatial import cKDTree

DEFAULT_DATA_RANGE = 1.2  # normalize_clip output spans [-0.2, 1]


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def rmse(pred, target) -> float:
    return math.sqrt(mse(pred, target))


def psnr(pred, target, data_range: float = DEFAULT_DATA_RANGE) -> float:
    if not data_range > 0:
        raise ValueError("data_range must be > 0")
    err = mse(pred, target)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / err)


def ssim_map(pred, target, window: int = 7, k1: float = 0.01, k2: float = 0.03,
             data_range: float = DEFAULT_DATA_RANGE) -> np.ndarray:
    """Local SSIM over every fully contained ``window x window`` patch
    (uniform weights, population variances)."""
    pred, target = _pair(pred, target)
    if pred.ndim != 2 or min(pred.shape) < window:
        raise ValueError(f"image {pred.shape} smaller than the {window}x{window} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    px = sliding_window_view(pred, (window, window))
    py = sliding_window_view(target, (window, window))
    mx = px.mean(axis=(-2, -1))
    my = py.mean(axis=(-2, -1))
    vx = ((px - mx[..., None, None]) ** 2).mean(axis=(-2, -1))
    vy = ((py - my[..., None, None]) ** 2).mean(axis=(-2, -1))
    cxy = ((px - mx[..., None, None]) * (py - my[..., None, None])).mean(axis=(-2, -1))
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx**2 + my**2 + c1) * (vx + vy + c2)
    return num / den


def ssim(pred, target, window: int = 7, k1: float = 0.01, k2: float = 0.03,
         data_range: float = DEFAULT_DATA_RANGE) -> float:
    return float(ssim_map(pred, target, window, k1, k2, data_range).mean())


def _masks(pred, target, class_id):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if class_id is None:
        return pred.astype(bool), target.astype(bool)
    return pred == class_id, target == class_id


def dice(pred, target, class_id: int | None = 1) -> float:
    a, b = _masks(pred, target, class_id)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def iou(pred, target, class_id: int | None = 1) -> float:
    a, b = _masks(pred, target, class_id)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 8-neighbor outside (image edge counts as outside)."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, np.ones((3, 3), dtype=bool), border_value=0)
    return mask & ~interior


def directed_percentile(src: np.ndarray, dst: np.ndarray, q: float = 95.0) -> float:
    """q-th percentile (linear interpolation) of nearest distances src -> dst."""
    d, _ = cKDTree(dst).query(src)
    return float(np.percentile(d, q))


def hd95(pred, target, class_id: int | None = None, spacing: float = 1.0,
         q: float = 95.0) -> float | None:
    """Symmetric percentile Hausdorff distance between mask boundaries.

    Returns ``None`` when either mask is empty.
    """
    a, b = _masks(pred, target, class_id)
    if not a.any() or not b.any():
        return None
    pa = np.argwhere(boundary(a)).astype(np.float64)
    pb = np.argwhere(boundary(b)).astype(np.float64)
    return spacing * max(directed_percentile(pa, pb, q), directed_percentile(pb, pa, q))


def second_moment_ellipse(image: np.ndarray, center: tuple[int, int] | None = None,
                          half_width: int | None = 64) -> tuple[float, np.ndarray]:
    """Aspect ratio and long-axis direction of a PSF.

    Uses the positive part of ``image`` inside a square window of
    ``2 * half_width + 1`` pixels around ``center`` (default: the argmax).
    The direction is returned as a unit (x, y) vector with y pointing up.
    """
    image = np.asarray(image, dtype=np.float64)
    if center is None:
        center = np.unravel_index(np.argmax(image), image.shape)
    r0, c0 = center
    if half_width is not None:
        rs = slice(max(r0 - half_width, 0), r0 + half_width + 1)
        cs = slice(max(c0 - half_width, 0), c0 + half_width + 1)
    else:
        rs = cs = slice(None)
    rows, cols = np.indices(image.shape)
    w = np.maximum(image[rs, cs], 0.0)
    x = cols[rs, cs].astype(np.float64)
    y = -rows[rs, cs].astype(np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("no positive mass in the window")
    mx, my = (w * x).sum() / total, (w * y).sum() / total
    dx, dy = x - mx, y - my
    cov = np.array([[(w * dx * dx).sum(), (w * dx * dy).sum()],
                    [(w * dx * dy).sum(), (w * dy * dy).sum()]]) / total
    evals, evecs = np.linalg.eigh(cov)
    return math.sqrt(evals[1] / evals[0]), evecs[:, 1]


# --------------------------------------------------------------------------

IMAGE_METRICS = ("mae", "rmse", "psnr", "ssim")
SEG_METRICS = ("dice", "iou", "hd95")


def _fmt(v):
    if v is None:
        return "undefined"
    return repr(float(v))


def _json_num(v):
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass
class MetricReport:
    sample_ids: list = field(default_factory=list)
    values: dict = field(default_factory=dict)  # metric -> list[float | None]

    def add(self, sample_id, row: dict) -> None:
        for name in row:
            self.values.setdefault(name, [None] * len(self.sample_ids))
        self.sample_ids.append(sample_id)
        for name, col in self.values.items():
            col.append(row.get(name))

    def summary(self) -> dict:
        out = {}
        for name, col in self.values.items():
            defined = [v for v in col if v is not None]
            entry = {"n": len(col), "n_defined": len(defined), "mean": None, "std": None}
            if defined:
                arr = np.array(defined, dtype=np.float64)
                mean = float(arr.mean())
                entry["mean"] = None if math.isnan(mean) else mean
                # std is undefined once an infinite PSNR is in the column
                entry["std"] = float(arr.std()) if np.isfinite(arr).all() else None
            out[name] = entry
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "metric", "value"])
            for i, sid in enumerate(self.sample_ids):
                for name, col in self.values.items():
                    w.writerow([sid, name, _fmt(col[i])])

    def to_json(self, path) -> None:
        summ = {k: {kk: _json_num(vv) if kk in ("mean", "std") else vv for kk, vv in v.items()}
                for k, v in self.summary().items()}
        with open(path, "w") as fh:
            json.dump(summ, fh, indent=2)
            fh.write("\n")


def image_metrics_row(pred, target, metrics=IMAGE_METRICS, data_range=DEFAULT_DATA_RANGE) -> dict:
    fns = {"mae": mae, "rmse": rmse,
           "psnr": lambda p, t: psnr(p, t, data_range),
           "ssim": lambda p, t: ssim(p, t, data_range=data_range)}
    unknown = set(metrics) - set(fns)
    if unknown:
        raise ValueError(f"unknown image metrics {sorted(unknown)}")
    return {m: fns[m](pred, target) for m in metrics}


def label_metrics_row(pred, target, metrics=SEG_METRICS, classes=(1, 2), spacing=1.0) -> dict:
    """One column per (metric, class), named like ``dice[1]``."""
    fns = {"dice": dice, "iou": iou,
           "hd95": lambda p, t, c: hd95(p, t, c, spacing)}
    unknown = set(metrics) - set(fns)
    if unknown:
        raise ValueError(f"unknown segmentation metrics {sorted(unknown)}")
    return {f"{m}[{c}]": fns[m](pred, target, c) for c in classes for m in metrics}


def evaluate_images(preds, targets, metrics=IMAGE_METRICS, data_range=DEFAULT_DATA_RANGE) -> MetricReport:
    report = MetricReport()
    for i, (p, t) in enumerate(zip(preds, targets)):
        report.add(i, image_metrics_row(p, t, metrics, data_range))
    return report
