"""Client-server weight averaging over simulated clients.

Clients exchange only parameter deltas and iteration counts with the
coordinating loop; no case data crosses the boundary. Rounds are
synchronous and aggregation happens in canonical client order, so results
do not depend on completion order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, objectives, supernet
from .data import SplitSet, augment, sample_minibatch
from .engine import SpatialField
from .evaluate import evaluate_dice
from .optim import make_optimizer
from .params import ParameterSet


@dataclass
class ClientUpdate:
    client_id: str
    round_index: int
    num_iterations: int
    delta: ParameterSet

    def __post_init__(self):
        if self.num_iterations < 1:
            raise ValueError(
                f"client {self.client_id!r}: iteration count must be >= 1, "
                f"got {self.num_iterations}"
            )

    def to_bytes(self) -> bytes:
        return checkpoint.dumps(
            self.delta,
            meta={"round": self.round_index, "iterations": self.num_iterations},
        )


@dataclass
class FLConfig:
    rounds: int = 50
    local_iterations: int = 20
    weighting: str = "iterations"  # or "fixed"
    fixed_weights: dict[str, float] | None = None
    seed: int = 0
    retain_best: bool = True

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.weighting not in ("iterations", "fixed"):
            raise ValueError(f"unknown weighting mode {self.weighting!r}")
        if self.weighting == "fixed":
            if not self.fixed_weights:
                raise ValueError("fixed weighting needs per-client weights")
            if any(w <= 0 for w in self.fixed_weights.values()):
                raise ValueError("fixed weights must be positive")


@dataclass
class TrainSettings:
    optimizer: str = "novograd"
    lr: float = 1e-3
    crops_per_image: int = 3
    images_per_batch: int = 6
    crop_size: tuple[int, ...] = (16, 16)
    loss: str = "combined"  # or "dice"
    smooth: float = 1e-5
    path_sampling: bool = True  # False trains the all-zeros baseline path
    augment: bool = True
    aug_shift: float = 0.1
    aug_contrast: float = 0.1
    aug_noise: float = 0.05
    full_batch: bool = False


@dataclass
class Client:
    client_id: str
    splits: SplitSet
    settings: TrainSettings = field(default_factory=TrainSettings)


def _loss_for(settings: TrainSettings, logits, masks):
    if settings.loss == "dice":
        probs = objectives.foreground_probability(logits)
        return objectives.dice_loss(
            probs, masks.reshape(probs.data.shape), smooth=settings.smooth)
    return objectives.combined_loss(logits, masks, smooth=settings.smooth)


def train_steps(model: supernet.SupernetModel, cases, settings: TrainSettings,
                iterations: int, rng: np.random.Generator):
    """Run minibatch updates in place; returns the per-step loss trace."""
    if not cases:
        raise ValueError("training split is empty")
    opt = make_optimizer(settings.optimizer, settings.lr)
    trace = []
    for _ in range(iterations):
        if settings.full_batch:
            imgs = np.stack([c.image for c in cases])
            masks = np.stack([c.mask for c in cases])
        else:
            imgs, masks = sample_minibatch(
                cases, settings.crops_per_image, settings.images_per_batch,
                settings.crop_size, rng)
            if settings.augment:
                imgs, masks = augment(imgs, masks, rng, settings.aug_shift,
                                      settings.aug_contrast, settings.aug_noise)
        path = (supernet.sample_path(model, rng) if settings.path_sampling
                else model.default_path())
        logits = supernet.forward(model, path, SpatialField(imgs))
        loss = _loss_for(settings, logits, masks)
        model.zero_grad()
        loss.backward()
        opt.step(model.active_parameters(path))
        trace.append(loss.item())
    return trace


def local_training(client: Client, model: supernet.SupernetModel,
                   global_params: ParameterSet, iterations: int,
                   rng: np.random.Generator, round_index: int = 0) -> ClientUpdate:
    """One client round: load the broadcast weights, train, emit the delta."""
    if iterations < 1:
        raise ValueError(
            f"client {client.client_id!r}: iteration count must be >= 1, got {iterations}"
        )
    if not client.splits.train:
        raise ValueError(f"client {client.client_id!r}: training split is empty")
    model.load_state(global_params)
    train_steps(model, client.splits.train, client.settings, iterations, rng)
    delta = model.state() - global_params
    return ClientUpdate(client_id=client.client_id, round_index=round_index,
                        num_iterations=iterations, delta=delta)


def aggregate(updates: list[ClientUpdate], previous: ParameterSet,
              weighting: str = "iterations",
              fixed_weights: dict[str, float] | None = None) -> ParameterSet:
    """Convex combination of client models: sum_k w_k (previous + delta_k)
    with w_k proportional to iteration counts (or the fixed weights)."""
    if not updates:
        raise ValueError("aggregate needs at least one client update")
    for u in updates:
        if not u.delta.congruent_with(previous):
            raise ValueError(
                f"client {u.client_id!r}: update is not shape-congruent with "
                "the global parameters"
            )
    ordered = sorted(updates, key=lambda u: u.client_id)
    if weighting == "fixed":
        if fixed_weights is None:
            raise ValueError("fixed weighting needs per-client weights")
        raw = [float(fixed_weights[u.client_id]) for u in ordered]
    else:
        raw = [float(u.num_iterations) for u in ordered]
    total = sum(raw)
    out = ParameterSet.zeros_like(previous)
    for w, u in zip(raw, ordered):
        out = out + (previous + u.delta).scale(w / total)
    return out


@dataclass
class RoundRecord:
    round_index: int
    client_id: str
    split: str
    metric: str
    value: float


@dataclass
class FederationResult:
    final_params: ParameterSet
    best_params: dict[str, ParameterSet]  # per client, by validation overlap
    best_round: dict[str, int]
    records: list[RoundRecord]


def run_federated(config: FLConfig, clients: list[Client],
                  model: supernet.SupernetModel) -> FederationResult:
    """Synchronous rounds of broadcast, local training, and aggregation.

    Per-round validation overlap is probed on the all-zeros path; each
    client may retain the global weights of its best validation round.
    """
    if not clients:
        raise ValueError("need at least one client")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ValueError("client ids must be unique")
    for c in clients:
        if not c.splits.train:
            raise ValueError(f"client {c.client_id!r}: training split is empty")

    global_params = model.state()
    records: list[RoundRecord] = []
    best_params = {c.client_id: global_params.clone() for c in clients}
    best_dice = {c.client_id: -1.0 for c in clients}
    best_round = {c.client_id: 0 for c in clients}
    probe_path = model.default_path()

    for t in range(1, config.rounds + 1):
        updates = []
        for client in clients:
            # stream keyed by client identity: independent of scheduling order
            key = zlib.crc32(client.client_id.encode())
            rng = np.random.default_rng([config.seed, t, key])
            updates.append(
                local_training(client, model, global_params,
                               config.local_iterations, rng, round_index=t)
            )
        global_params = aggregate(updates, global_params, config.weighting,
                                  config.fixed_weights)
        model.load_state(global_params)
        for client in clients:
            if not client.splits.validation:
                continue
            scores = evaluate_dice(model, probe_path, client.splits.validation)
            mean = float(np.mean(scores))
            records.append(RoundRecord(t, client.client_id, "val", "dice_mean", mean))
            if config.retain_best and mean > best_dice[client.client_id]:
                best_dice[client.client_id] = mean
                best_params[client.client_id] = global_params.clone()
                best_round[client.client_id] = t

    if not config.retain_best:
        best_params = {c.client_id: global_params.clone() for c in clients}
        best_round = {c.client_id: config.rounds for c in clients}
    model.load_state(global_params)
    return FederationResult(final_params=global_params, best_params=best_params,
                            best_round=best_round, records=records)
