"""Supervision: pixel-wise BCE plus soft-IoU, summed over the three
saliency maps with equal weights.

Both losses are differentiable in the prediction only; targets are
constants in [0, 1]. BCE clamps predictions to [eps, 1-eps] (eps=1e-7)
and is mean-reduced; IoU uses global sums over the whole tensor and is
defined as 0 when prediction and target are both identically zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from salfuse.errors import ShapeError
from salfuse.tensor import Tensor, add, make_op

BCE_EPS = 1e-7


def _target_array(pred: Tensor, target) -> np.ndarray:
    g = target.data if isinstance(target, Tensor) else np.asarray(target)
    if g.shape != pred.data.shape:
        raise ShapeError(f"target shape {g.shape} != prediction shape "
                         f"{pred.data.shape}")
    g = g.astype(pred.data.dtype, copy=False)
    if g.size and (g.min() < 0 or g.max() > 1):
        raise ValueError("target values must lie in [0, 1]")
    return g


def bce_loss(pred: Tensor, target) -> Tensor:
    g = _target_array(pred, target)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
    value = -(g * np.log(p) + (1.0 - g) * np.log1p(-p)).mean()
    count = p.size

    def bwd(grad):
        dp = (-(g / p) + (1.0 - g) / (1.0 - p)) / count
        return (grad * dp * inside,)

    return make_op(np.asarray(value, dtype=pred.data.dtype), (pred,), bwd)


def iou_loss(pred: Tensor, target) -> Tensor:
    g = _target_array(pred, target)
    p = pred.data
    inter = float((g * p).sum())
    union = float((p + g - g * p).sum())
    if union == 0.0:
        # both maps identically zero: perfect agreement by convention
        def bwd(grad):
            return (np.zeros_like(p),)

        return make_op(np.asarray(0.0, dtype=p.dtype), (pred,), bwd)
    value = 1.0 - inter / union

    def bwd(grad):
        dp = -(g * union - inter * (1.0 - g)) / (union * union)
        return (grad * dp,)

    return make_op(np.asarray(value, dtype=p.dtype), (pred,), bwd)


@dataclass
class LossBreakdown:
    bce_r: float
    iou_r: float
    bce_d: float
    iou_d: float
    bce_f: float
    iou_f: float

    @property
    def total(self) -> float:
        return (self.bce_r + self.iou_r + self.bce_d + self.iou_d
                + self.bce_f + self.iou_f)


def total_loss(sal_r: Tensor, sal_d: Tensor, sal_f: Tensor, target) \
        -> tuple[Tensor, LossBreakdown]:
    """Equal-weight sum of BCE+IoU over the three maps. Returns the scalar
    loss tensor (for backward) and a float breakdown (for logging)."""
    terms = {}
    total = None
    for key, sal in (("r", sal_r), ("d", sal_d), ("f", sal_f)):
        b = bce_loss(sal, target)
        i = iou_loss(sal, target)
        terms[f"bce_{key}"] = b.item()
        terms[f"iou_{key}"] = i.item()
        part = add(b, i)
        total = part if total is None else add(total, part)
    return total, LossBreakdown(**terms)
