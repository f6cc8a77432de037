"""Straight-line reference implementations used to cross-check the fast paths.

Everything here favors obviousness over speed: plain Python loops, no shared
helpers with the production code, float64 throughout.  The self-check command
and the test suite compare these against the vectorized implementations.
"""
from __future__ import annotations

import numpy as np


def scan_reference(u, delta, a_log, b, c, d):
    """Recurrence evaluated one scalar at a time; shapes as in selective_scan."""
    u = np.asarray(u, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    a_log = np.asarray(a_log, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    g, ell, ch = u.shape
    n = a_log.shape[1]
    y = np.zeros((g, ell, ch))
    for gi in range(g):
        for ci in range(ch):
            h = [0.0] * n
            for t in range(ell):
                dt = delta[gi, t, ci]
                acc = 0.0
                for ni in range(n):
                    abar = np.exp(-np.exp(a_log[ci, ni]) * dt)
                    bbar = dt * b[gi, t, ni]
                    h[ni] = abar * h[ni] + bbar * u[gi, t, ci]
                    acc += c[gi, t, ni] * h[ni]
                y[gi, t, ci] = acc + d[ci] * u[gi, t, ci]
    return y


def finite_difference_grads(fn, arrays, step=1e-4, sample=None, rng=None):
    """Central-difference gradients of scalar fn(*arrays) w.r.t. each array.

    When ``sample`` is given, only that many randomly chosen elements per
    array are probed and the rest of the returned gradient is NaN; callers
    then compare only the probed positions.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = []
    for idx, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        if sample is not None and flat.size > sample:
            if rng is None:
                rng = np.random.default_rng(0)
            positions = rng.choice(flat.size, size=sample, replace=False)
            grad = np.full(flat.size, np.nan)
        else:
            positions = range(flat.size)
            grad = np.zeros(flat.size)
        for pos in positions:
            orig = flat[pos]
            flat[pos] = orig + step
            hi = fn(*arrays)
            flat[pos] = orig - step
            lo = fn(*arrays)
            flat[pos] = orig
            grad[pos] = (hi - lo) / (2.0 * step)
        grads.append(grad.reshape(arr.shape))
    return grads


_EPS = float(np.finfo(np.float64).eps)


def _pair64(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return pred, gt


def dice_iou_reference(pred, gt, threshold=0.5):
    """Set-arithmetic overlap, one pixel at a time."""
    pred, gt = _pair64(pred, gt)
    h, w = gt.shape
    inter = p_count = g_count = 0
    for r in range(h):
        for c in range(w):
            p = 1 if pred[r, c] >= threshold else 0
            g = 1 if gt[r, c] == 1.0 else 0
            inter += p * g
            p_count += p
            g_count += g
    union = p_count + g_count - inter
    if union == 0:
        return 1.0, 1.0
    return 2.0 * inter / (p_count + g_count), inter / union


def mae_reference(pred, gt):
    pred, gt = _pair64(pred, gt)
    total = 0.0
    for r in range(gt.shape[0]):
        for c in range(gt.shape[1]):
            total += abs(pred[r, c] - gt[r, c])
    return total / gt.size


def _gauss7_reference():
    k = [[0.0] * 7 for _ in range(7)]
    s = 0.0
    for i in range(7):
        for j in range(7):
            k[i][j] = np.exp(-((i - 3) ** 2 + (j - 3) ** 2) / 50.0)
            s += k[i][j]
    for i in range(7):
        for j in range(7):
            k[i][j] /= s
    return k


def weighted_fbeta_reference(pred, gt):
    """Direct evaluation of the weighted F-measure, beta^2 = 1.

    Tie rule for the nearest-foreground lookup: among foreground pixels at
    the minimal distance, take the smallest error value.
    """
    pred, gt = _pair64(pred, gt)
    h, w = gt.shape
    fg = [(r, c) for r in range(h) for c in range(w) if gt[r, c] == 1.0]
    pred_sum = sum(pred[r, c] for r in range(h) for c in range(w))
    if not fg:
        prec, rec = (1.0, 1.0) if pred_sum == 0.0 else (0.0, 1.0)
    elif pred_sum == 0.0:
        prec, rec = 1.0, 0.0
    else:
        e = [[abs(pred[r, c] - gt[r, c]) for c in range(w)] for r in range(h)]
        et = [row[:] for row in e]
        dst = [[0.0] * w for _ in range(h)]
        for r in range(h):
            for c in range(w):
                if gt[r, c] == 1.0:
                    continue
                best_d2 = None
                best_e = None
                for (fr, fc) in fg:
                    d2 = (r - fr) ** 2 + (c - fc) ** 2
                    if best_d2 is None or d2 < best_d2:
                        best_d2 = d2
                        best_e = e[fr][fc]
                    elif d2 == best_d2 and e[fr][fc] < best_e:
                        best_e = e[fr][fc]
                et[r][c] = best_e
                dst[r][c] = np.sqrt(best_d2)
        kern = _gauss7_reference()
        ea = [[0.0] * w for _ in range(h)]
        for r in range(h):
            for c in range(w):
                acc = 0.0
                for i in range(7):
                    for j in range(7):
                        rr, cc = r + i - 3, c + j - 3
                        if 0 <= rr < h and 0 <= cc < w:
                            acc += kern[i][j] * et[rr][cc]
                ea[r][c] = acc
        fg_sum = float(len(fg))
        ew_fg = 0.0
        ew_bg = 0.0
        for r in range(h):
            for c in range(w):
                if gt[r, c] == 1.0:
                    # substitution step: smoothed error replaces raw error
                    # on foreground pixels where it is smaller
                    ew_fg += ea[r][c] if ea[r][c] < e[r][c] else e[r][c]
                else:
                    weight = 2.0 - np.exp(np.log(0.5) / 5.0 * dst[r][c])
                    ew_bg += weight * e[r][c]
        tpw = fg_sum - ew_fg
        fpw = ew_bg
        rec = 1.0 - ew_fg / fg_sum
        prec = tpw / (_EPS + tpw + fpw)
    return 2.0 * rec * prec / (_EPS + prec + rec)


def s_measure_reference(pred, gt):
    """Direct evaluation of the structure measure, alpha = 0.5."""
    pred, gt = _pair64(pred, gt)
    h, w = gt.shape
    n = h * w
    fg_vals = [pred[r, c] for r in range(h) for c in range(w) if gt[r, c] == 1.0]
    bg_vals = [1.0 - pred[r, c] for r in range(h) for c in range(w) if gt[r, c] == 0.0]
    u = len(fg_vals) / n
    if u == 0.0:
        return min(max(1.0 - sum(pred[r, c] for r in range(h) for c in range(w)) / n, 0.0), 1.0)
    if u == 1.0:
        return min(max(sum(pred[r, c] for r in range(h) for c in range(w)) / n, 0.0), 1.0)

    def obj(vals):
        x = sum(vals) / len(vals)
        if len(vals) > 1:
            sd = np.sqrt(sum((v - x) ** 2 for v in vals) / (len(vals) - 1))
        else:
            sd = 0.0
        return 2.0 * x / (x * x + 1.0 + sd + _EPS)

    s_obj = u * obj(fg_vals) + (1.0 - u) * obj(bg_vals)

    total = float(len(fg_vals))
    cx = sum(gt[r, c] * (c + 1) for r in range(h) for c in range(w)) / total
    cy = sum(gt[r, c] * (r + 1) for r in range(h) for c in range(w)) / total
    cx = int(np.floor(cx + 0.5))
    cy = int(np.floor(cy + 0.5))

    def ssim_region(rows, cols):
        m = len(rows) * len(cols)
        if m == 0:
            return 0.0
        px = [pred[r, c] for r in rows for c in cols]
        gx = [gt[r, c] for r in rows for c in cols]
        x = sum(px) / m
        y = sum(gx) / m
        sx = sum((v - x) ** 2 for v in px) / (m - 1 + _EPS)
        sy = sum((v - y) ** 2 for v in gx) / (m - 1 + _EPS)
        sxy = sum((a - x) * (b - y) for a, b in zip(px, gx)) / (m - 1 + _EPS)
        alpha = 4.0 * x * y * sxy
        beta = (x * x + y * y) * (sx + sy)
        if alpha != 0.0:
            return alpha / (beta + _EPS)
        if beta == 0.0:
            return 1.0
        return 0.0

    top, bottom = list(range(cy)), list(range(cy, h))
    left, right = list(range(cx)), list(range(cx, w))
    s_reg = 0.0
    for rows, cols in ((top, left), (top, right), (bottom, left), (bottom, right)):
        weight = len(rows) * len(cols) / n
        s_reg += weight * ssim_region(rows, cols)

    return min(max(0.5 * s_obj + 0.5 * s_reg, 0.0), 1.0)


def e_measure_reference(pred, gt):
    """Direct evaluation of the enhanced-alignment measure."""
    pred, gt = _pair64(pred, gt)
    h, w = gt.shape
    n = h * w
    th = 2.0 * sum(pred[r, c] for r in range(h) for c in range(w)) / n
    if th > 1.0:
        th = 1.0
    fm = [[1.0 if pred[r, c] >= th else 0.0 for c in range(w)] for r in range(h)]
    gt_sum = sum(gt[r, c] for r in range(h) for c in range(w))
    fm_sum = sum(fm[r][c] for r in range(h) for c in range(w))
    total = 0.0
    if gt_sum == 0.0:
        for r in range(h):
            for c in range(w):
                total += 1.0 - fm[r][c]
    elif gt_sum == n:
        total = fm_sum
    else:
        mu_g = gt_sum / n
        mu_f = fm_sum / n
        for r in range(h):
            for c in range(w):
                dg = gt[r, c] - mu_g
                df = fm[r][c] - mu_f
                align = 2.0 * dg * df / (dg * dg + df * df + _EPS)
                total += (align + 1.0) ** 2 / 4.0
    return total / n


def compare_grads(analytic, numeric, rel_tol=1e-3):
    """Worst relative error over probed positions; NaNs in numeric are skipped."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    mask = ~np.isnan(numeric)
    if not mask.any():
        return 0.0
    diff = np.abs(analytic[mask] - numeric[mask])
    scale = np.maximum(np.abs(numeric[mask]), 1.0)
    return float(np.max(diff / scale))
