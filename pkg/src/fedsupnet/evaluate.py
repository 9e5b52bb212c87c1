"""Whole-image evaluation helpers shared by training, adaptation, and the
cross-site matrices."""

from __future__ import annotations

import numpy as np

from . import objectives, supernet
from .engine import SpatialField


def evaluate_dice(model: supernet.SupernetModel, path, cases) -> list[float]:
    """Per-case hard overlap of argmax predictions on full images."""
    scores = []
    for case in cases:
        logits = supernet.forward(model, path, SpatialField(case.image[None]))
        pred = (logits.data.argmax(axis=1)[0] == 1).astype(np.float64)
        scores.append(objectives.dice_score(pred, case.mask))
    return scores


def mean_case_loss(model: supernet.SupernetModel, path, cases,
                   smooth: float = 1e-5) -> float:
    """Mean combined loss over full images, one case at a time."""
    vals = []
    for case in cases:
        logits = supernet.forward(model, path, SpatialField(case.image[None]))
        vals.append(objectives.combined_loss(logits, case.mask[None],
                                             smooth=smooth).item())
    return float(np.mean(vals))
