"""MAE, S-measure, E-measure and weighted F-measure for camouflaged/salient maps.

Predictions are unit-interval maps; ground truths are binary maps (binarized
at 0.5 on entry). Degenerate ground truths (all background / all foreground)
follow the conventions of the reference MATLAB toolboxes.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from urcod import kernels
from urcod.imagedata import check_prob_map, thread_count

EPS = np.finfo(np.float64).eps
METRIC_NAMES = ("mae", "s_measure", "e_measure", "weighted_f")


def _pair(pred, gt):
    pred = check_prob_map(pred, "pred")
    gt = check_prob_map(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt >= 0.5


def mae(pred, gt):
    pred = check_prob_map(pred, "pred")
    gt = check_prob_map(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: pred {pred.shape} vs gt {gt.shape}")
    return float(np.mean(np.abs(pred - gt)))


# -- S-measure ------------------------------------------------------------


def _object_score(values):
    # values: prediction restricted to one region of the gt
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _s_object(pred, gt):
    u = gt.mean()
    fg = _object_score(pred[gt])
    bg = _object_score(1.0 - pred[~gt])
    return u * fg + (1.0 - u) * bg


def _split_counts(coords, n):
    """Pixel counts before the split nearest the foreground centroid.

    The split falls on the pixel boundary closest to the centroid. When the
    centroid sits exactly on a pixel center both neighbouring boundaries are
    returned, so mirrored inputs see mirrored splits.
    """
    total = int(coords.sum())
    if total % n == 0:
        c = total // n
        return (c, c + 1)
    return (total // n + 1,)


def _ssim(pred, gt):
    n = pred.size
    if n == 0:
        return 0.0
    g = gt.astype(np.float64)
    x, y = pred.mean(), g.mean()
    denom = max(n - 1, 1)
    sx = np.sum((pred - x) ** 2) / denom
    sy = np.sum((g - y) ** 2) / denom
    sxy = np.sum((pred - x) * (g - y)) / denom
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _s_region_at(pred, gt, x, y):
    h, w = gt.shape
    area = h * w
    w1 = x * y / area
    w2 = (w - x) * y / area
    w3 = x * (h - y) / area
    w4 = 1.0 - w1 - w2 - w3
    parts = (
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    )
    scores = [_ssim(pred[r, c], gt[r, c]) for r, c in parts]
    return w1 * scores[0] + w2 * scores[1] + w3 * scores[2] + w4 * scores[3]


def _s_region(pred, gt):
    ys, xs = np.nonzero(gt)
    n = len(xs)
    splits = [(x, y) for x in _split_counts(xs, n) for y in _split_counts(ys, n)]
    return sum(_s_region_at(pred, gt, x, y) for x, y in splits) / len(splits)


def s_measure(pred, gt, alpha=0.5):
    """Structure measure: ``alpha * S_object + (1 - alpha) * S_region``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    pred, gt = _pair(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(max(score, 0.0))


# -- E-measure ------------------------------------------------------------


def adaptive_threshold(pred):
    return min(2.0 * float(np.mean(pred)), 1.0)


def e_measure(pred, gt, threshold=None):
    """Enhanced-alignment measure of the binarized prediction.

    ``threshold=None`` uses the adaptive threshold ``min(2 * mean(pred), 1)``.
    """
    pred, gt = _pair(pred, gt)
    thr = adaptive_threshold(pred) if threshold is None else float(threshold)
    fm = (pred >= thr).astype(np.float64)
    if not gt.any():
        xi = np.where(fm == 0, 1.0, -1.0)
    elif gt.all():
        xi = np.where(fm == 1, 1.0, -1.0)
    else:
        g = gt.astype(np.float64)
        fc = fm - fm.mean()
        gc = g - g.mean()
        xi = 2.0 * gc * fc / (gc * gc + fc * fc + EPS)
    return float(np.mean((1.0 + xi) ** 2 / 4.0))


# -- weighted F-measure ---------------------------------------------------


def gaussian_window(size=7, sigma=5.0):
    """Normalized square Gaussian, same as MATLAB ``fspecial('gaussian', size, sigma)``."""
    r = (size - 1) / 2.0
    ax = np.arange(size) - r
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    k[k < np.finfo(np.float64).eps * k.max()] = 0
    return k / k.sum()


def weighted_f_measure(pred, gt, beta_sq=1.0, sigma=5.0, window=7):
    """Weighted F-measure with distance-based error dependency and importance.

    An all-background gt scores 0, as in the reference implementation.
    """
    if beta_sq < 0:
        raise ValueError("beta_sq must be nonnegative")
    pred, gt = _pair(pred, gt)
    if not gt.any():
        return 0.0
    g = gt.astype(np.float64)
    err = np.abs(pred - g)
    if gt.all():
        dist = np.zeros_like(err)
        err_t = err
    else:
        dist = ndimage.distance_transform_edt(~gt)
        sqdist = np.rint(dist * dist).astype(np.int64)
        err_t = kernels.nearest_foreground_values(
            np.ascontiguousarray(err), np.ascontiguousarray(gt.astype(np.uint8)), np.ascontiguousarray(sqdist)
        )
    # correlate == convolve for a symmetric kernel; zero padding as MATLAB imfilter
    ea = ndimage.correlate(err_t, gaussian_window(window, sigma), mode="constant", cval=0.0)
    min_e_ea = np.where(gt & (ea < err), ea, err)
    importance = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e_ea * importance
    tpw = g.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (tpw + fpw + EPS)
    return float((1.0 + beta_sq) * recall * precision / (recall + beta_sq * precision + EPS))


# -- aggregation ----------------------------------------------------------


@dataclass
class MetricReport:
    per_sample: list = field(default_factory=list)  # (id, mae, s, e, wf)
    alpha: float = 0.5
    beta_sq: float = 1.0

    @property
    def means(self):
        if not self.per_sample:
            return (float("nan"),) * 4
        arr = np.array([row[1:] for row in self.per_sample], dtype=np.float64)
        return tuple(float(v) for v in arr.mean(axis=0))

    def mean(self, name):
        return self.means[METRIC_NAMES.index(name)]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("id",) + METRIC_NAMES)
        for sid, *vals in self.per_sample:
            writer.writerow([sid] + [f"{v:.6f}" for v in vals])
        writer.writerow(["MEAN"] + [f"{v:.6f}" for v in self.means])
        return buf.getvalue()


def evaluate_pair(pred, gt, alpha=0.5, beta_sq=1.0):
    return (
        mae(pred, gt),
        s_measure(pred, gt, alpha),
        e_measure(pred, gt),
        weighted_f_measure(pred, gt, beta_sq),
    )


def evaluate_dataset(preds, samples, alpha=0.5, beta_sq=1.0, ids=None):
    """Score ``preds[i]`` against ``samples[i].gt_map``.

    ``ids``, when given, must match the sample ids one to one.
    """
    if len(preds) != len(samples):
        raise ValueError(f"length mismatch: {len(preds)} predictions for {len(samples)} samples")
    if ids is not None:
        for pid, s in zip(ids, samples):
            if pid != s.id:
                raise ValueError(f"id mismatch: prediction {pid!r} vs sample {s.id!r}")
    jobs = [(p, s.gt_map) for p, s in zip(preds, samples)]
    workers = thread_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda job: evaluate_pair(*job, alpha, beta_sq), jobs))
    else:
        rows = [evaluate_pair(p, g, alpha, beta_sq) for p, g in jobs]
    return MetricReport([(s.id, *r) for s, r in zip(samples, rows)], alpha, beta_sq)
