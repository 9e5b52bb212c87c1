"""Per-client path personalization with frozen network weights.

The gradient search relaxes the discrete per-slot choice into softmax
path logits, optimizes them with Adam through the mixture forward on the
client's validation set, and discretizes by per-slot argmax. The chosen
path only replaces the all-zeros baseline path if it scores at least as
well on validation overlap (keep-better rule, ties keep the baseline).
An exhaustive search over all paths serves as the exact reference on
small nets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import engine, objectives, supernet
from .engine import SpatialField
from .evaluate import evaluate_dice, mean_case_loss
from .optim import Adam


@dataclass
class AdaptationResult:
    searched_path: tuple[int, ...]
    searched_dice: float
    default_path: tuple[int, ...]
    default_dice: float
    chosen_path: tuple[int, ...]
    chosen_dice: float
    trajectory: list[float] = field(default_factory=list)
    objective: float | None = None  # searched path's validation loss, if computed

    def to_dict(self) -> dict:
        return {
            "searched_path": list(self.searched_path),
            "searched_dice": self.searched_dice,
            "default_path": list(self.default_path),
            "default_dice": self.default_dice,
            "chosen_path": list(self.chosen_path),
            "chosen_dice": self.chosen_dice,
            "objective": self.objective,
        }


def _keep_better(model, searched, val_cases, trajectory=None,
                 objective=None) -> AdaptationResult:
    default = model.default_path()
    default_dice = float(np.mean(evaluate_dice(model, default, val_cases)))
    if searched == default:
        searched_dice = default_dice
    else:
        searched_dice = float(np.mean(evaluate_dice(model, searched, val_cases)))
    if searched_dice > default_dice:
        chosen, chosen_dice = searched, searched_dice
    else:
        chosen, chosen_dice = default, default_dice
    return AdaptationResult(
        searched_path=searched, searched_dice=searched_dice,
        default_path=default, default_dice=default_dice,
        chosen_path=chosen, chosen_dice=chosen_dice,
        trajectory=trajectory or [], objective=objective,
    )


def adapt_gradient(model: supernet.SupernetModel, val_cases, epochs: int = 1,
                   lr: float = 1e-3, smooth: float = 1e-5) -> AdaptationResult:
    """Optimize path logits for ``epochs`` passes over the validation set.

    Network weights are left untouched: their gradients are disabled for
    the duration of the search and the logits start uniform (all zeros).
    """
    if not val_cases:
        raise ValueError("validation split is empty")
    alphas = [
        engine.parameter(np.zeros(len(slot.candidates)), name=f"alpha.{slot.slot_id}")
        for slot in model.slots
    ]
    opt = Adam(lr=lr)
    alpha_params = {a.name: a for a in alphas}
    frozen = [(f, f.requires_grad) for f in model.fields.values()]
    for f, _ in frozen:
        f.requires_grad = False
    trajectory = []
    try:
        for _ in range(epochs):
            for case in val_cases:
                logits = supernet.forward_mixture(
                    model, alphas, SpatialField(case.image[None]))
                loss = objectives.combined_loss(logits, case.mask[None],
                                                smooth=smooth)
                for a in alphas:
                    a.zero_grad()
                loss.backward()
                opt.step(alpha_params)
                trajectory.append(loss.item())
    finally:
        for f, req in frozen:
            f.requires_grad = req
    searched = tuple(int(a.data.argmax()) for a in alphas)
    return _keep_better(model, searched, val_cases, trajectory=trajectory)


def adapt_exhaustive(model: supernet.SupernetModel, val_cases,
                     budget: int = 4096, smooth: float = 1e-5) -> AdaptationResult:
    """Evaluate every path's validation loss and return the exact optimum.

    Ties go to the lexicographically smallest path, which makes the result
    independent of enumeration order.
    """
    if not val_cases:
        raise ValueError("validation split is empty")
    n_paths = model.path_count
    if n_paths > budget:
        raise ValueError(
            f"path count {n_paths} exceeds the exhaustive budget {budget}"
        )
    best_path = None
    best_loss = None
    for path in itertools.product(*(range(n) for n in model.candidate_counts())):
        val = mean_case_loss(model, path, val_cases, smooth=smooth)
        if best_loss is None or val < best_loss:
            best_loss, best_path = val, path
    return _keep_better(model, best_path, val_cases, objective=best_loss)
