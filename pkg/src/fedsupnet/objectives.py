"""Segmentation losses and the evaluation Dice metric.

The soft overlap loss is 1 - 2*sum(p*g) / (sum(p^2) + sum(g^2)), computed
on probabilities; its smoothed variant adds the same constant to numerator
and denominator. The training default combines it 1:1 with cross entropy;
a loss switch keeps the overlap-only form available.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import SpatialField


def _check_binary(arr: np.ndarray, what: str):
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{what} must be binary (0/1)")


def dice_loss(pred: SpatialField, target, smooth: float = 0.0) -> SpatialField:
    """Soft overlap loss of probabilities against a binary target."""
    pred = engine.as_field(pred)
    tgt = np.asarray(target, dtype=pred.data.dtype)
    if tgt.shape != pred.data.shape:
        raise ValueError(
            f"dice_loss: prediction shape {pred.data.shape} != target shape {tgt.shape}"
        )
    _check_binary(tgt, "dice_loss target")
    if pred.data.min() < -1e-12 or pred.data.max() > 1.0 + 1e-12:
        raise ValueError("dice_loss: predictions must lie in [0, 1]")
    if smooth < 0:
        raise ValueError(f"dice_loss: smooth must be >= 0, got {smooth}")

    tfield = SpatialField(tgt)
    inter = engine.sum_all(pred * tfield)
    psq = engine.sum_all(pred * pred)
    gsq = float((tgt * tgt).sum())
    num = engine.add_const(engine.mul_const(inter, 2.0), smooth)
    den = engine.add_const(psq, gsq + smooth)
    return engine.add_const(engine.mul_const(engine.div(num, den), -1.0), 1.0)


def cross_entropy(logits: SpatialField, target) -> SpatialField:
    """Mean voxelwise negative log-softmax of the target class."""
    logits = engine.as_field(logits)
    return engine.cross_entropy_map(logits, np.asarray(target))


def foreground_probability(logits: SpatialField) -> SpatialField:
    """Softmax foreground probability of 2-class logits via the sigmoid identity."""
    if logits.data.shape[1] != 2:
        raise ValueError(
            f"foreground_probability: expected 2 class channels, got {logits.data.shape[1]}"
        )
    fg = engine.slice_channels(logits, 1, 2)
    bg = engine.slice_channels(logits, 0, 1)
    return engine.sigmoid(engine.sub(fg, bg))


def combined_loss(logits: SpatialField, target, smooth: float = 0.0) -> SpatialField:
    """Overlap loss on the foreground probability plus cross entropy, 1:1."""
    logits = engine.as_field(logits)
    tgt = np.asarray(target)
    _check_binary(tgt, "combined_loss target")
    fg = foreground_probability(logits)
    dl = dice_loss(fg, tgt.reshape(fg.data.shape).astype(np.float64), smooth=smooth)
    ce = cross_entropy(logits, tgt.astype(np.int64))
    return engine.add(dl, ce)


def dice_score(pred_labels, target_labels) -> float:
    """Hard overlap 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    p = np.asarray(pred_labels)
    g = np.asarray(target_labels)
    if p.shape != g.shape:
        raise ValueError(f"dice_score: shapes differ, {p.shape} vs {g.shape}")
    _check_binary(p, "dice_score prediction")
    _check_binary(g, "dice_score target")
    psum = float(p.sum())
    gsum = float(g.sum())
    if psum + gsum == 0.0:
        return 1.0
    return 2.0 * float((p * g).sum()) / (psum + gsum)
