"""Segmentation quality measures and a dataset-level evaluator.

Six per-image measures: overlap (dice, IoU at a fixed threshold), mean
absolute error, weighted F-measure, structure measure, and enhanced-alignment
measure.  Predictions are probability maps in [0,1]; ground truths are
strictly binary.  Conventions that the published formulas leave open are
pinned here and mirrored by the straight-line oracles in reference.py:

- binarization uses ``pred >= threshold``;
- the nearest-foreground lookup resolves distance ties by taking the
  smallest error value among all equidistant foreground pixels, which keeps
  the weighted F-measure symmetric under image flips;
- the enhanced-alignment score is the plain mean of the enhanced matrix
  (denominator H*W), so a perfect prediction scores exactly 1;
- region-split centroids round half-up on 1-based coordinates.
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DatasetError, ShapeError

_EPS = sys.float_info.epsilon
METRIC_KEYS = ("mdice", "miou", "fbw", "s_alpha", "e_xi", "mae")
_TABLE_ROWS = (("mDice", "mdice"), ("mIoU", "miou"), ("Fbw", "fbw"),
               ("Salpha", "s_alpha"), ("Exi", "e_xi"), ("MAE", "mae"))


def _as_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground-truth shape {gt.shape}")
    if pred.ndim != 2:
        raise ShapeError(f"metrics expect H x W maps, got shape {pred.shape}")
    if pred.size == 0:
        raise ShapeError("metrics need at least one pixel")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise ValueError(f"prediction values must lie in [0,1], got "
                         f"[{pred.min():.4g}, {pred.max():.4g}]")
    gt64 = gt.astype(np.float64)
    if not np.isin(gt64, (0.0, 1.0)).all():
        raise ValueError("ground truth must be strictly binary")
    return pred, gt64.astype(bool)


def dice_iou(pred, gt, threshold: float = 0.5):
    """Overlap measures on the thresholded prediction; empty-vs-empty is 1."""
    pred, gt = _as_pair(pred, gt)
    p = pred >= threshold
    inter = float(np.logical_and(p, gt).sum())
    union = float(np.logical_or(p, gt).sum())
    if union == 0.0:
        return 1.0, 1.0
    return 2.0 * inter / (p.sum() + gt.sum()), inter / union


def mae(pred, gt) -> float:
    pred, gt = _as_pair(pred, gt)
    return float(np.abs(pred - gt.astype(np.float64)).mean())


def _gauss_kernel(shape=(7, 7), sigma=5.0) -> np.ndarray:
    m, n = [(s - 1.0) / 2.0 for s in shape]
    y, x = np.ogrid[-m:m + 1, -n:n + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0.0
    return h / h.sum()


_KERNEL = _gauss_kernel()


def _nearest_foreground(fg: np.ndarray, err: np.ndarray):
    """Distance to the nearest foreground pixel and the error value there.

    Returns (dist, err_at_nearest) over background pixels in row-major order.
    When several foreground pixels tie on distance, the smallest error value
    among them is used.
    """
    h, w = fg.shape
    flat_fg = np.flatnonzero(fg.ravel())
    flat_bg = np.flatnonzero(~fg.ravel())
    fr, fc = flat_fg // w, flat_fg % w
    err_fg = err.ravel()[flat_fg]
    dist = np.empty(flat_bg.size)
    nearest_err = np.empty(flat_bg.size)
    chunk = max(1, (1 << 22) // max(flat_fg.size, 1))
    for s in range(0, flat_bg.size, chunk):
        idx = flat_bg[s:s + chunk]
        dr = idx[:, None] // w - fr[None, :]
        dc = idx[:, None] % w - fc[None, :]
        d2 = dr * dr + dc * dc
        d2min = d2.min(axis=1)
        tied = d2 == d2min[:, None]
        nearest_err[s:s + chunk] = np.where(tied, err_fg[None, :], np.inf).min(axis=1)
        dist[s:s + chunk] = np.sqrt(d2min.astype(np.float64))
    return dist, nearest_err


def weighted_fbeta(pred, gt) -> float:
    """Weighted F-measure with beta^2 = 1 and 7x7 sigma-5 error smoothing."""
    pred, gt = _as_pair(pred, gt)
    gt_f = gt.astype(np.float64)
    if not gt.any():
        prec, rec = (1.0, 1.0) if pred.sum() == 0.0 else (0.0, 1.0)
    elif pred.sum() == 0.0:
        prec, rec = 1.0, 0.0
    else:
        e = np.abs(pred - gt_f)
        dist, nearest_err = _nearest_foreground(gt, e)
        et = e.copy()
        et.ravel()[np.flatnonzero(~gt.ravel())] = nearest_err
        ea = ndimage.correlate(et, _KERNEL, mode="constant")
        min_e_ea = e.copy()
        sel = gt & (ea < e)
        min_e_ea[sel] = ea[sel]
        b = np.ones_like(e)
        b.ravel()[np.flatnonzero(~gt.ravel())] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist)
        ew = min_e_ea * b
        tpw = gt.sum() - ew[gt].sum()
        fpw = ew[~gt].sum()
        rec = 1.0 - ew[gt].mean()
        prec = tpw / (_EPS + tpw + fpw)
    return float(2.0 * rec * prec / (_EPS + prec + rec))


def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    if values.size > 1:
        sd = float(np.sqrt(((values - x) ** 2).sum() / (values.size - 1)))
    else:
        sd = 0.0
    return float(2.0 * x / (x * x + 1.0 + sd + _EPS))


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    sx = ((p - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + _EPS)
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0.0:
        return float(alpha / (beta + _EPS))
    if beta == 0.0:
        return 1.0
    return 0.0


def s_measure(pred, gt) -> float:
    """Structure measure: object and centroid-split region similarity, alpha=0.5."""
    pred, gt = _as_pair(pred, gt)
    gt_f = gt.astype(np.float64)
    y_mean = gt_f.mean()
    if y_mean == 0.0:
        return float(np.clip(1.0 - pred.mean(), 0.0, 1.0))
    if y_mean == 1.0:
        return float(np.clip(pred.mean(), 0.0, 1.0))

    obj = y_mean * _object_score(pred[gt]) + (1.0 - y_mean) * _object_score(1.0 - pred[~gt])

    h, w = gt.shape
    total = gt_f.sum()
    cx = int(np.floor((gt_f.sum(axis=0) * np.arange(1, w + 1)).sum() / total + 0.5))
    cy = int(np.floor((gt_f.sum(axis=1) * np.arange(1, h + 1)).sum() / total + 0.5))
    region = 0.0
    for rs, cs in ((slice(None, cy), slice(None, cx)), (slice(None, cy), slice(cx, None)),
                   (slice(cy, None), slice(None, cx)), (slice(cy, None), slice(cx, None))):
        part_g = gt_f[rs, cs]
        weight = part_g.size / (h * w)
        region += weight * _region_ssim(pred[rs, cs], part_g)

    return float(np.clip(0.5 * obj + 0.5 * region, 0.0, 1.0))


def e_measure(pred, gt) -> float:
    """Enhanced-alignment measure with the adaptive 2*mean threshold."""
    pred, gt = _as_pair(pred, gt)
    th = min(2.0 * pred.mean(), 1.0)
    fm = (pred >= th).astype(np.float64)
    gt_f = gt.astype(np.float64)
    if gt_f.sum() == 0.0:
        enhanced = 1.0 - fm
    elif gt_f.mean() == 1.0:
        enhanced = fm
    else:
        dfm = fm - fm.mean()
        dgt = gt_f - gt_f.mean()
        align = 2.0 * dgt * dfm / (dgt * dgt + dfm * dfm + _EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.sum() / gt.size)


def evaluate_pair(pred, gt) -> dict:
    """All six measures for one prediction/ground-truth pair."""
    dice, iou = dice_iou(pred, gt)
    return {
        "mdice": float(dice),
        "miou": float(iou),
        "fbw": float(weighted_fbeta(pred, gt)),
        "s_alpha": float(s_measure(pred, gt)),
        "e_xi": float(e_measure(pred, gt)),
        "mae": float(mae(pred, gt)),
    }


@dataclass
class MetricsReport:
    """Per-image records plus dataset means."""

    n_images: int
    per_image: list
    means: dict

    def to_json_dict(self) -> dict:
        return {"n_images": self.n_images, "per_image": self.per_image, "means": self.means}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Aligned text table; values in percent, two decimals."""
        lines = [f"{'metric':<8}{'%':>8}"]
        for label, key in _TABLE_ROWS:
            lines.append(f"{label:<8}{self.means[key] * 100.0:>8.2f}")
        return "\n".join(lines)


def evaluate_dataset(predictions, ground_truths, ids=None) -> MetricsReport:
    """Evaluate aligned streams of predictions and ground truths."""
    preds = iter(predictions)
    gts = iter(ground_truths)
    per_image = []
    sentinel = object()
    index = 0
    while True:
        p = next(preds, sentinel)
        g = next(gts, sentinel)
        if p is sentinel and g is sentinel:
            break
        if p is sentinel or g is sentinel:
            raise DatasetError("prediction and ground-truth streams differ in length")
        record = evaluate_pair(p, g)
        record["id"] = str(ids[index]) if ids is not None else str(index)
        per_image.append(record)
        index += 1
    if not per_image:
        raise DatasetError("cannot evaluate an empty stream")
    means = {k: float(np.mean([r[k] for r in per_image])) for k in METRIC_KEYS}
    return MetricsReport(len(per_image), per_image, means)
