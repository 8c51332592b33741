"""Salient-object-detection evaluation metrics.

All functions take a prediction map P (floats in [0, 1]) and a ground
truth G of the same H x W shape; G is binarized at >= 0.5. Computation
is float64 throughout. Conventions that the literature leaves loose are
pinned here (and mirrored by the independent re-implementations in the
test suite):

* thresholds: 256 points t/255, predictions binarized with >=;
  precision of an empty prediction is 1, recall of an empty GT is 1
* adaptive threshold: min(2 * mean(P), 1), shared by F_avg and E
* S-measure: population std in the object term; centroid from rounded
  1-based weighted coordinates; empty quadrants contribute 0; result
  clamped to [0, 1]
* E-measure: enhanced alignment averaged over all pixels
* weighted F: beta^2 = 1; Gaussian sigma 5 on a 7x7 kernel; importance
  decay exp(ln(0.5)/5 * dist); nearest-foreground ties resolved to the
  lowest row, then lowest column; empty GT scores 0
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

from salfuse.errors import ShapeError

BETA2 = 0.3
_EPS = 1e-12

N_THRESHOLDS = 256


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 2 or gt.ndim != 2:
        raise ShapeError(f"metrics expect 2-D maps, got {pred.shape} and {gt.shape}")
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and GT {gt.shape} disagree; "
                         "resample the prediction first")
    if pred.size and (pred.min() < 0 or pred.max() > 1):
        raise ValueError("prediction values must lie in [0, 1]")
    return pred, gt >= 0.5


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, g = _check_pair(pred, gt)
    return float(np.abs(pred - g.astype(np.float64)).mean())


def pr_curve(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Precision/recall at the 256 thresholds t/255, t = 0..255."""
    pred, g = _check_pair(pred, gt)
    npos = int(g.sum())
    precision = np.empty(N_THRESHOLDS, dtype=np.float64)
    recall = np.empty(N_THRESHOLDS, dtype=np.float64)
    for t in range(N_THRESHOLDS):
        binp = pred >= (t / 255.0)
        npred = int(binp.sum())
        tp = int((binp & g).sum())
        precision[t] = tp / npred if npred else 1.0
        recall[t] = tp / npos if npos else 1.0
    return precision, recall


def _fscore(p: float, r: float, beta2: float) -> float:
    denom = beta2 * p + r
    return (1 + beta2) * p * r / denom if denom > 0 else 0.0


def adaptive_threshold(pred: np.ndarray) -> float:
    return min(2.0 * float(np.asarray(pred, dtype=np.float64).mean()), 1.0)


def f_measure(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """(F_max over the threshold sweep, F at the adaptive threshold)."""
    pred, g = _check_pair(pred, gt)
    precision, recall = pr_curve(pred, gt)
    f_max = max(_fscore(p, r, BETA2) for p, r in zip(precision, recall))
    tau = adaptive_threshold(pred)
    binp = pred >= tau
    npred = int(binp.sum())
    npos = int(g.sum())
    tp = int((binp & g).sum())
    p_a = tp / npred if npred else 1.0
    r_a = tp / npos if npos else 1.0
    return float(f_max), float(_fscore(p_a, r_a, BETA2))


# ---------------------------------------------------------------------------
# weighted F-measure


def nearest_foreground(fg: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact Euclidean feature transform toward the foreground mask.

    Returns (squared distance, nearest row, nearest col) per pixel; the
    nearest foreground pixel is unique up to ties, which resolve to the
    lowest row, then the lowest column. Requires at least one True.
    """
    h, w = fg.shape
    cols = np.arange(w)
    ncol = np.zeros((h, w), dtype=np.int64)
    rowd2 = np.full((h, w), np.inf, dtype=np.float64)
    for r in range(h):
        cs = np.flatnonzero(fg[r])
        if cs.size == 0:
            continue
        pos = np.searchsorted(cs, cols)
        left = np.clip(pos - 1, 0, cs.size - 1)
        right = np.clip(pos, 0, cs.size - 1)
        dl = np.abs(cols - cs[left])
        dr = np.abs(cols - cs[right])
        best = np.where(dl <= dr, cs[left], cs[right])  # tie -> lower column
        ncol[r] = best
        rowd2[r] = (cols - best).astype(np.float64) ** 2
    rows = np.arange(h, dtype=np.float64)
    d2 = np.empty((h, w), dtype=np.float64)
    nrow = np.empty((h, w), dtype=np.int64)
    for i in range(h):
        total = (rows - i)[:, None] ** 2 + rowd2
        r_star = np.argmin(total, axis=0)  # first minimum -> lowest row
        nrow[i] = r_star
        d2[i] = total[r_star, cols]
    return d2, nrow, ncol[nrow, cols[None, :]]


def _matlab_gauss(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return k / k.sum()


def weighted_f(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dependency- and importance-weighted F (beta^2 = 1)."""
    pred, g = _check_pair(pred, gt)
    if not g.any():
        return 0.0
    err = np.abs(pred - g.astype(np.float64))
    if g.all():
        err_dep = err
        dist = np.zeros_like(err)
    else:
        d2, nrow, ncol = nearest_foreground(g)
        dist = np.sqrt(d2)
        err_dep = err.copy()
        bg = ~g
        err_dep[bg] = err[nrow[bg], ncol[bg]]
    smoothed = convolve(err_dep, _matlab_gauss(), mode="constant", cval=0.0)
    min_err = np.where(g & (smoothed < err), smoothed, err)
    importance = np.where(g, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    weighted_err = min_err * importance
    npos = float(g.sum())
    tpw = npos - weighted_err[g].sum()
    fpw = weighted_err[~g].sum()
    rec = 1.0 - weighted_err[g].mean()
    prec = tpw / (tpw + fpw + _EPS)
    if prec + rec <= 0:
        return 0.0
    return float(2.0 * prec * rec / (prec + rec + _EPS))


# ---------------------------------------------------------------------------
# structure measure


def _s_object_term(vals: np.ndarray) -> float:
    if vals.size == 0:
        return 0.0
    x = float(vals.mean())
    sig = float(vals.std())
    return 2.0 * x / (x * x + 1.0 + sig + _EPS)


def _s_object(pred: np.ndarray, g: np.ndarray) -> float:
    mu = float(g.mean())
    o_fg = _s_object_term(pred[g])
    o_bg = _s_object_term(1.0 - pred[~g])
    return mu * o_fg + (1.0 - mu) * o_bg


def _centroid(g: np.ndarray) -> tuple[int, int]:
    """Rounded 1-based foreground centroid (cy, cx), used as split counts."""
    h, w = g.shape
    total = float(g.sum())
    rows = np.arange(1, h + 1, dtype=np.float64)
    cols = np.arange(1, w + 1, dtype=np.float64)
    cy = int(np.round((g.sum(axis=1) * rows).sum() / total))
    cx = int(np.round((g.sum(axis=0) * cols).sum() / total))
    return cy, cx


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x = float(p.mean())
    y = float(g.mean())
    sx = float(((p - x) ** 2).sum()) / (n - 1 + _EPS)
    sy = float(((g - y) ** 2).sum()) / (n - 1 + _EPS)
    sxy = float(((p - x) * (g - y)).sum()) / (n - 1 + _EPS)
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0.0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0.0 else 0.0


def _s_region(pred: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    cy, cx = _centroid(g)
    area = float(h * w)
    gf = g.astype(np.float64)
    quads = [
        (pred[:cy, :cx], gf[:cy, :cx], cy * cx / area),
        (pred[:cy, cx:], gf[:cy, cx:], cy * (w - cx) / area),
        (pred[cy:, :cx], gf[cy:, :cx], (h - cy) * cx / area),
    ]
    w4 = 1.0 - sum(wt for _, _, wt in quads)
    quads.append((pred[cy:, cx:], gf[cy:, cx:], w4))
    return sum(wt * _region_ssim(p, q) for p, q, wt in quads)


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    pred, g = _check_pair(pred, gt)
    mu = float(g.mean())
    if mu == 0.0:  # GT entirely background
        score = 1.0 - float(pred.mean())
    elif mu == 1.0:  # GT entirely foreground
        score = float(pred.mean())
    else:
        score = alpha * _s_object(pred, g) + (1.0 - alpha) * _s_region(pred, g)
    return float(min(max(score, 0.0), 1.0))


# ---------------------------------------------------------------------------
# enhanced-alignment measure


def e_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, g = _check_pair(pred, gt)
    binp = (pred >= adaptive_threshold(pred)).astype(np.float64)
    gf = g.astype(np.float64)
    if not g.any():
        enhanced = 1.0 - binp
    elif g.all():
        enhanced = binp
    else:
        phi_g = gf - gf.mean()
        phi_p = binp - binp.mean()
        align = 2.0 * phi_g * phi_p / (phi_g ** 2 + phi_p ** 2 + _EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


# ---------------------------------------------------------------------------
# per-image bundle and aggregation


@dataclass
class ImageMetrics:
    mae: float
    f_max: float
    f_avg: float
    f_weighted: float
    s_measure: float
    e_measure: float
    precision: np.ndarray
    recall: np.ndarray


@dataclass
class MetricReport:
    n_images: int
    mae: float
    f_max: float
    f_avg: float
    f_weighted: float
    s_measure: float
    e_measure: float
    precision: np.ndarray
    recall: np.ndarray

    def summary(self) -> dict[str, float | int]:
        return {
            "mae": self.mae,
            "f_max": self.f_max,
            "f_avg": self.f_avg,
            "f_weighted": self.f_weighted,
            "s_measure": self.s_measure,
            "e_measure": self.e_measure,
            "n_images": self.n_images,
        }


def evaluate_pair(pred: np.ndarray, gt: np.ndarray) -> ImageMetrics:
    precision, recall = pr_curve(pred, gt)
    f_max, f_avg = f_measure(pred, gt)
    return ImageMetrics(
        mae=mae(pred, gt),
        f_max=f_max,
        f_avg=f_avg,
        f_weighted=weighted_f(pred, gt),
        s_measure=s_measure(pred, gt),
        e_measure=e_measure(pred, gt),
        precision=precision,
        recall=recall,
    )


def aggregate(per_image: list[ImageMetrics]) -> MetricReport:
    """Arithmetic mean of scalar metrics; PR curves averaged pointwise."""
    if not per_image:
        raise ValueError("aggregate needs at least one image")
    return MetricReport(
        n_images=len(per_image),
        mae=float(np.mean([m.mae for m in per_image])),
        f_max=float(np.mean([m.f_max for m in per_image])),
        f_avg=float(np.mean([m.f_avg for m in per_image])),
        f_weighted=float(np.mean([m.f_weighted for m in per_image])),
        s_measure=float(np.mean([m.s_measure for m in per_image])),
        e_measure=float(np.mean([m.e_measure for m in per_image])),
        precision=np.mean([m.precision for m in per_image], axis=0),
        recall=np.mean([m.recall for m in per_image], axis=0),
    )
