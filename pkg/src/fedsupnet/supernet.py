"""Encoder-decoder supernet with per-slot interchangeable modules.

Every slot owns an ordered list of candidate modules; a path picks one
candidate per slot. All candidates of all slots hold independent
parameters in one flat collection, so the parameter count does not depend
on the active path, and a forward pass touches only the chosen modules.
Resolution changes are fixed plumbing (max-pool down, nearest-neighbor
up); skip features are concatenated and folded back to the level width by
a fixed 1x1 merge convolution, and a final 1x1 head emits per-voxel class
scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import engine
from .engine import SpatialField
from .params import ParameterSet

CONV_KINDS = ("full_conv", "axis_conv", "planar_conv")


@dataclass(frozen=True)
class Candidate:
    """One interchangeable module: a convolution variant, a residual pair,
    or a pass-through."""

    kind: str
    size: int = 3
    axis: int = 0  # active axis for axis_conv, excluded axis for planar_conv

    def __post_init__(self):
        if self.kind not in CONV_KINDS + ("residual", "identity"):
            raise ValueError(f"unknown candidate kind {self.kind!r}")
        if self.kind in ("full_conv", "residual") and self.size % 2 == 0:
            raise ValueError(f"{self.kind} kernel size {self.size} must be odd")

    @property
    def preserves_channels_only(self) -> bool:
        return self.kind in ("identity", "residual")

    def spatial_kernel(self, ndim: int) -> tuple[int, ...]:
        if self.kind == "full_conv" or self.kind == "residual":
            return (self.size,) * ndim
        if self.kind == "axis_conv":
            return tuple(3 if a == self.axis else 1 for a in range(ndim))
        if self.kind == "planar_conv":
            return tuple(1 if a == self.axis else 3 for a in range(ndim))
        return ()

    def axes_mask(self, ndim: int) -> tuple[int, ...]:
        if self.kind == "axis_conv":
            return (self.axis,)
        if self.kind == "planar_conv":
            return tuple(a for a in range(ndim) if a != self.axis)
        return tuple(range(ndim))

    def kernel_shapes(self, in_ch: int, out_ch: int, ndim: int) -> list[tuple[int, ...]]:
        """Shapes of this candidate's parameter tensors, in application order."""
        if self.kind == "identity":
            return []
        sp = self.spatial_kernel(ndim)
        if self.kind == "residual":
            return [(out_ch, in_ch) + sp, (out_ch, out_ch) + sp]
        return [(out_ch, in_ch) + sp]

    def label(self) -> str:
        if self.kind == "full_conv":
            return f"full{self.size}"
        if self.kind == "axis_conv":
            return f"axis{self.axis}"
        if self.kind == "planar_conv":
            return f"planar-{self.axis}"
        if self.kind == "residual":
            return f"res{self.size}"
        return "identity"

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("full_conv", "residual"):
            d["size"] = self.size
        if self.kind in ("axis_conv", "planar_conv"):
            d["axis"] = self.axis
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        return cls(kind=d["kind"], size=int(d.get("size", 3)), axis=int(d.get("axis", 0)))


@dataclass(frozen=True)
class SlotSpec:
    slot_id: str
    in_channels: int
    out_channels: int
    candidates: tuple[Candidate, ...]
    level: int

    def validate(self, ndim: int):
        if not self.candidates:
            raise ValueError(f"slot {self.slot_id!r}: candidate list is empty")
        for cand in self.candidates:
            if cand.preserves_channels_only and self.in_channels != self.out_channels:
                raise ValueError(
                    f"slot {self.slot_id!r}: candidate {cand.label()!r} requires "
                    f"matching channels, got {self.in_channels} -> {self.out_channels}"
                )
            if cand.kind in ("axis_conv", "planar_conv") and not (0 <= cand.axis < ndim):
                raise ValueError(
                    f"slot {self.slot_id!r}: candidate axis {cand.axis} out of range "
                    f"for {ndim} spatial axes"
                )

    def to_dict(self) -> dict:
        return {
            "slot_id": self.slot_id,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "level": self.level,
            "candidates": [c.to_dict() for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlotSpec":
        return cls(
            slot_id=d["slot_id"],
            in_channels=int(d["in_channels"]),
            out_channels=int(d["out_channels"]),
            candidates=tuple(Candidate.from_dict(c) for c in d["candidates"]),
            level=int(d["level"]),
        )


@dataclass
class SupernetConfig:
    ndim: int
    in_channels: int
    classes: int
    encoder: list[list[SlotSpec]] = field(default_factory=list)
    bottleneck: list[SlotSpec] = field(default_factory=list)
    decoder: list[list[SlotSpec]] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.encoder) + 1

    def all_slots(self) -> list[SlotSpec]:
        slots: list[SlotSpec] = []
        for block in self.encoder:
            slots.extend(block)
        slots.extend(self.bottleneck)
        for block in self.decoder:
            slots.extend(block)
        return slots

    @property
    def path_count(self) -> int:
        return math.prod(len(s.candidates) for s in self.all_slots())

    def validate(self):
        if self.ndim not in (2, 3):
            raise ValueError(f"spatial rank must be 2 or 3, got {self.ndim}")
        if len(self.decoder) != len(self.encoder):
            raise ValueError(
                f"decoder has {len(self.decoder)} stages, encoder has {len(self.encoder)}"
            )
        if not self.bottleneck:
            raise ValueError("bottleneck needs at least one slot")
        ids = [s.slot_id for s in self.all_slots()]
        if len(set(ids)) != len(ids):
            raise ValueError("slot ids are not unique")
        for s in self.all_slots():
            s.validate(self.ndim)
        # channel chain through encoder blocks and bottleneck
        prev = self.in_channels
        for block in self.encoder + [self.bottleneck]:
            for s in block:
                if s.in_channels != prev:
                    raise ValueError(
                        f"slot {s.slot_id!r}: expects {s.in_channels} input channels, "
                        f"previous stage provides {prev}"
                    )
                prev = s.out_channels
        for block in self.decoder:
            for a, b in zip(block, block[1:]):
                if b.in_channels != a.out_channels:
                    raise ValueError(
                        f"slot {b.slot_id!r}: expects {b.in_channels} input channels, "
                        f"slot {a.slot_id!r} provides {a.out_channels}"
                    )

    def to_dict(self) -> dict:
        return {
            "ndim": self.ndim,
            "in_channels": self.in_channels,
            "classes": self.classes,
            "encoder": [[s.to_dict() for s in blk] for blk in self.encoder],
            "bottleneck": [s.to_dict() for s in self.bottleneck],
            "decoder": [[s.to_dict() for s in blk] for blk in self.decoder],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SupernetConfig":
        return cls(
            ndim=int(d["ndim"]),
            in_channels=int(d["in_channels"]),
            classes=int(d["classes"]),
            encoder=[[SlotSpec.from_dict(s) for s in blk] for blk in d["encoder"]],
            bottleneck=[SlotSpec.from_dict(s) for s in d["bottleneck"]],
            decoder=[[SlotSpec.from_dict(s) for s in blk] for blk in d["decoder"]],
        )

    def save(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    @classmethod
    def load(cls, path) -> "SupernetConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))


# ----------------------------------------------------------------------
# default architectures
# ----------------------------------------------------------------------

def _changing_menu(full_sizes=(3, 5, 7)) -> tuple[Candidate, ...]:
    return tuple(Candidate("full_conv", size=k) for k in full_sizes)


def _preserving_menu(ndim: int) -> tuple[Candidate, ...]:
    reduced = Candidate("axis_conv", axis=0) if ndim == 2 else Candidate(
        "planar_conv", axis=ndim - 1)
    return (Candidate("full_conv", size=3), reduced,
            Candidate("residual", size=3), Candidate("identity"))


def default_config(ndim: int = 2, base_width: int = 4, in_channels: int = 1,
                   classes: int = 2) -> SupernetConfig:
    """Three-level net with 3 widening slots (3 candidates each) and 6
    width-preserving slots (4 candidates each): 3^3 * 4^6 = 110,592 paths.
    Candidate index 0 is always the plain size-3 convolution, so the
    all-zeros path is the baseline encoder-decoder."""
    w = base_width
    chg = _changing_menu()
    pres = _preserving_menu(ndim)
    enc = [
        [SlotSpec("enc0a", in_channels, w, chg, 0),
         SlotSpec("enc0b", w, w, pres, 0)],
        [SlotSpec("enc1a", w, 2 * w, chg, 1),
         SlotSpec("enc1b", 2 * w, 2 * w, pres, 1)],
    ]
    bot = [SlotSpec("bot_a", 2 * w, 4 * w, chg, 2),
           SlotSpec("bot_b", 4 * w, 4 * w, pres, 2)]
    dec = [
        [SlotSpec("dec1a", 2 * w, 2 * w, pres, 1),
         SlotSpec("dec1b", 2 * w, 2 * w, pres, 1)],
        [SlotSpec("dec0a", w, w, pres, 0)],
    ]
    cfg = SupernetConfig(ndim=ndim, in_channels=in_channels, classes=classes,
                         encoder=enc, bottleneck=bot, decoder=dec)
    cfg.validate()
    return cfg


def desk_config(ndim: int = 2, base_width: int = 8, in_channels: int = 1,
                classes: int = 2) -> SupernetConfig:
    """Two-level, 32-path net small enough for exhaustive path search."""
    w = base_width
    chg = tuple(Candidate("full_conv", size=k) for k in (3, 5))
    pres = (Candidate("full_conv", size=3), Candidate("identity"))
    enc = [[SlotSpec("enc0a", in_channels, w, chg, 0),
            SlotSpec("enc0b", w, w, pres, 0)]]
    bot = [SlotSpec("bot_a", w, 2 * w, chg, 1),
           SlotSpec("bot_b", 2 * w, 2 * w, pres, 1)]
    dec = [[SlotSpec("dec0a", w, w, pres, 0)]]
    cfg = SupernetConfig(ndim=ndim, in_channels=in_channels, classes=classes,
                         encoder=enc, bottleneck=bot, decoder=dec)
    cfg.validate()
    return cfg


def config_by_name(name: str, **kwargs) -> SupernetConfig:
    if name == "default":
        return default_config(**kwargs)
    if name == "desk":
        return desk_config(**kwargs)
    raise ValueError(f"unknown supernet preset {name!r}")


# ----------------------------------------------------------------------
# model
# ----------------------------------------------------------------------

def _he_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    std = math.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape)


class SupernetModel:
    """Parameter store plus forward rules for one supernet configuration."""

    def __init__(self, config: SupernetConfig, fields: dict[str, SpatialField]):
        self.config = config
        self.fields = fields
        self._slots = config.all_slots()

    # -- parameter access ------------------------------------------------
    def parameters(self) -> dict[str, SpatialField]:
        return self.fields

    def state(self) -> ParameterSet:
        return ParameterSet({k: f.data.copy() for k, f in self.fields.items()})

    def load_state(self, ps: ParameterSet):
        if ps.names() != list(self.fields.keys()):
            raise ValueError("parameter set does not match this model's layout")
        for name, f in self.fields.items():
            if ps[name].shape != f.data.shape:
                raise ValueError(f"parameter {name!r}: shape mismatch")
            f.data = ps[name].copy()

    def zero_grad(self):
        for f in self.fields.values():
            f.zero_grad()

    # -- structure -------------------------------------------------------
    @property
    def slots(self) -> list[SlotSpec]:
        return self._slots

    @property
    def num_slots(self) -> int:
        return len(self._slots)

    @property
    def path_count(self) -> int:
        return self.config.path_count

    def candidate_counts(self) -> tuple[int, ...]:
        return tuple(len(s.candidates) for s in self._slots)

    def default_path(self) -> tuple[int, ...]:
        return (0,) * self.num_slots

    def active_parameters(self, path) -> dict[str, SpatialField]:
        """Parameters a forward pass along ``path`` touches: the chosen
        candidates' kernels plus the shared merge and head kernels."""
        path = self.validate_path(path)
        out: dict[str, SpatialField] = {}
        for i, slot in enumerate(self._slots):
            prefix = f"{slot.slot_id}.c{path[i]}."
            for name, f in self.fields.items():
                if name.startswith(prefix):
                    out[name] = f
        for name, f in self.fields.items():
            if name.startswith("merge") or name.startswith("head"):
                out[name] = f
        return out

    def validate_path(self, path):
        path = tuple(int(i) for i in path)
        if len(path) != self.num_slots:
            raise ValueError(
                f"path has {len(path)} entries, model has {self.num_slots} slots"
            )
        for idx, slot in zip(path, self._slots):
            if not (0 <= idx < len(slot.candidates)):
                raise ValueError(
                    f"slot {slot.slot_id!r}: candidate index {idx} out of range "
                    f"(has {len(slot.candidates)})"
                )
        return path


def build(config: SupernetConfig, seed: int) -> SupernetModel:
    """Deterministically initialize every candidate of every slot."""
    config.validate()
    rng = np.random.default_rng(seed)
    fields: dict[str, SpatialField] = {}

    def add_param(name: str, shape: tuple[int, ...]):
        fields[name] = engine.parameter(_he_init(rng, shape), name=name)

    for slot in config.all_slots():
        for ci, cand in enumerate(slot.candidates):
            shapes = cand.kernel_shapes(slot.in_channels, slot.out_channels, config.ndim)
            for wi, shape in enumerate(shapes):
                add_param(f"{slot.slot_id}.c{ci}.w{wi}", shape)

    # fixed plumbing: per-decoder-stage merge of (upsampled, skip) -> level width
    up_ch = config.bottleneck[-1].out_channels
    enc_out = [blk[-1].out_channels for blk in config.encoder]
    ones = (1,) * config.ndim
    for j, block in enumerate(config.decoder):
        skip_ch = enc_out[len(config.encoder) - 1 - j]
        add_param(f"merge{j}.w", (block[0].in_channels, up_ch + skip_ch) + ones)
        up_ch = block[-1].out_channels
    add_param("head.w", (config.classes, up_ch) + ones)
    return SupernetModel(config, fields)


def sample_path(model: SupernetModel, rng: np.random.Generator) -> tuple[int, ...]:
    """Independent uniform draw over each slot's candidates."""
    return tuple(int(rng.integers(0, len(s.candidates))) for s in model.slots)


def _apply_candidate(model: SupernetModel, slot: SlotSpec, idx: int,
                     x: SpatialField) -> SpatialField:
    cand = slot.candidates[idx]
    ndim = model.config.ndim
    if cand.kind == "identity":
        return x
    w0 = model.fields[f"{slot.slot_id}.c{idx}.w0"]
    mask = cand.axes_mask(ndim)
    if cand.kind == "residual":
        w1 = model.fields[f"{slot.slot_id}.c{idx}.w1"]
        h = engine.relu(engine.conv(x, w0, mask))
        return engine.relu(engine.add(engine.conv(h, w1, mask), x))
    return engine.relu(engine.conv(x, w0, mask))


def _mix_candidates(model: SupernetModel, slot: SlotSpec, alpha: SpatialField,
                    x: SpatialField) -> SpatialField:
    if alpha.data.shape != (len(slot.candidates),):
        raise ValueError(
            f"slot {slot.slot_id!r}: expected {len(slot.candidates)} path logits, "
            f"got shape {alpha.data.shape}"
        )
    shift = float(alpha.data.max())
    e = engine.exp(engine.add_const(alpha, -shift))
    total = engine.sum_all(e)
    out = None
    for j in range(len(slot.candidates)):
        wj = engine.div(engine.index_element(e, j), total)
        term = engine.mul_scalar(_apply_candidate(model, slot, j, x), wj)
        out = term if out is None else engine.add(out, term)
    return out


def _run(model: SupernetModel, x: SpatialField, slot_fn) -> SpatialField:
    cfg = model.config
    d = cfg.ndim
    if x.data.ndim != d + 2:
        raise ValueError(
            f"input rank {x.data.ndim} does not match configured rank {d + 2}"
        )
    if x.data.shape[1] != cfg.in_channels:
        raise ValueError(
            f"input has {x.data.shape[1]} channels, config expects {cfg.in_channels}"
        )
    divisor = 2 ** (cfg.levels - 1)
    for a, s in enumerate(x.data.shape[2:]):
        if s % divisor != 0:
            raise ValueError(
                f"spatial axis {a} extent {s} not divisible by {divisor}"
            )

    cursor = 0
    skips = []
    h = x
    for block in cfg.encoder:
        for slot in block:
            h = slot_fn(slot, cursor, h)
            cursor += 1
        skips.append(h)
        h = engine.downsample(h)
    for slot in cfg.bottleneck:
        h = slot_fn(slot, cursor, h)
        cursor += 1
    for j, block in enumerate(cfg.decoder):
        h = engine.upsample(h)
        h = engine.concat_channels(h, skips[len(skips) - 1 - j])
        h = engine.relu(engine.conv(h, model.fields[f"merge{j}.w"]))
        for slot in block:
            h = slot_fn(slot, cursor, h)
            cursor += 1
    return engine.conv(h, model.fields["head.w"])


def forward(model: SupernetModel, path, x: SpatialField) -> SpatialField:
    """Class scores of the sub-network selected by ``path``."""
    path = model.validate_path(path)
    x = engine.as_field(x)
    return _run(model, x, lambda slot, i, h: _apply_candidate(model, slot, path[i], h))


def forward_mixture(model: SupernetModel, alphas, x: SpatialField) -> SpatialField:
    """Softmax-weighted blend of every candidate's output at every slot."""
    if len(alphas) != model.num_slots:
        raise ValueError(
            f"got {len(alphas)} logit vectors, model has {model.num_slots} slots"
        )
    x = engine.as_field(x)
    return _run(model, x, lambda slot, i, h: _mix_candidates(model, slot, alphas[i], h))


def extract_subnetwork(model: SupernetModel, path) -> SupernetModel:
    """Standalone single-path model; forward equals the path-conditioned
    supernet forward exactly."""
    path = model.validate_path(path)
    cfg = model.config

    cursor = 0
    def strip(block):
        nonlocal cursor
        out = []
        for slot in block:
            chosen = slot.candidates[path[cursor]]
            out.append(SlotSpec(slot.slot_id, slot.in_channels, slot.out_channels,
                                (chosen,), slot.level))
            cursor += 1
        return out

    sub_cfg = SupernetConfig(
        ndim=cfg.ndim, in_channels=cfg.in_channels, classes=cfg.classes,
        encoder=[strip(b) for b in cfg.encoder],
        bottleneck=strip(cfg.bottleneck),
        decoder=[strip(b) for b in cfg.decoder],
    )
    sub_cfg.validate()

    fields: dict[str, SpatialField] = {}
    for i, slot in enumerate(model.slots):
        cand = slot.candidates[path[i]]
        n = len(cand.kernel_shapes(slot.in_channels, slot.out_channels, cfg.ndim))
        for wi in range(n):
            src = model.fields[f"{slot.slot_id}.c{path[i]}.w{wi}"]
            name = f"{slot.slot_id}.c0.w{wi}"
            fields[name] = engine.parameter(src.data.copy(), name=name)
    for name, f in model.fields.items():
        if name.startswith("merge") or name.startswith("head"):
            fields[name] = engine.parameter(f.data.copy(), name=name)
    return SupernetModel(sub_cfg, fields)
