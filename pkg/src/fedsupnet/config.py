"""Experiment configuration: one YAML file drives one run.

Every training hyperparameter is a named key. Defaults follow the
reference protocol where it states a value (learning rates, batch
composition 3 crops x 6 images, the 10x supernet budget factor, split
proportions, four-site cohort sizes); everything else is a desk-scale
choice and plainly visible here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import SPLIT_FRACTIONS, SiteProfile

MODES = ("unet-local", "unet-fed", "sn-local", "sn-fed", "adapt", "crosseval")


class ConfigError(ValueError):
    pass


def _require(cond: bool, field_name: str, msg: str):
    if not cond:
        raise ConfigError(f"config field {field_name!r}: {msg}")


def default_site_profiles() -> list[SiteProfile]:
    """Four sites with the reference cohort sizes 63/50/98/32 and distinct
    intensity/contrast/noise/shape statistics."""
    return [
        SiteProfile("A", 63, offset=0.0, gain=1.0, noise_sigma=0.45,
                    ecc_range=(1.0, 1.4), size_range=(0.20, 0.30)),
        SiteProfile("B", 50, offset=0.5, gain=0.65, noise_sigma=0.65,
                    ecc_range=(1.5, 2.2), size_range=(0.14, 0.22)),
        SiteProfile("C", 98, offset=-0.4, gain=1.35, noise_sigma=0.35,
                    ecc_range=(1.0, 1.2), size_range=(0.26, 0.36)),
        SiteProfile("D", 32, offset=0.3, gain=0.8, noise_sigma=0.8,
                    ecc_range=(1.2, 1.8), size_range=(0.16, 0.26)),
    ]


@dataclass
class DataSection:
    image_size: tuple[int, ...] = (32, 32)
    generation_seed: int = 7
    split_seed: int = 11
    split_fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    normalize: bool = True
    sites: list[SiteProfile] = field(default_factory=default_site_profiles)

    def validate(self):
        _require(len(self.image_size) in (2, 3), "data.image_size",
                 f"needs 2 or 3 extents, got {len(self.image_size)}")
        _require(all(s > 0 for s in self.image_size), "data.image_size",
                 "extents must be positive")
        _require(len(self.sites) >= 1, "data.sites", "needs at least one site")
        _require(abs(sum(self.split_fractions) - 1.0) < 1e-9,
                 "data.split_fractions", "must sum to 1")
        ids = [s.site_id for s in self.sites]
        _require(len(set(ids)) == len(ids), "data.sites", "site ids must be unique")


@dataclass
class SupernetSection:
    preset: str = "desk"  # "desk" | "default"
    base_width: int = 8
    in_channels: int = 1
    classes: int = 2
    config_file: str | None = None  # overrides the preset when given

    def validate(self):
        if self.config_file is None:
            _require(self.preset in ("desk", "default"), "supernet.preset",
                     f"unknown preset {self.preset!r}")
        _require(self.base_width >= 1, "supernet.base_width", "must be >= 1")
        _require(self.classes >= 2, "supernet.classes", "must be >= 2")


@dataclass
class TrainSection:
    iterations: int = 40  # baseline local budget; supernet modes multiply
    rounds: int = 5  # baseline federated rounds; supernet modes multiply
    local_iterations: int = 8
    sn_train_multiplier: int = 10
    optimizer: str = "novograd"
    lr: float = 1e-3
    crops_per_image: int = 3
    images_per_batch: int = 6
    crop_size: tuple[int, ...] = (16, 16)
    loss: str = "combined"
    smooth: float = 1e-5
    augment: bool = True
    aug_shift: float = 0.1
    aug_contrast: float = 0.1
    aug_noise: float = 0.05
    weighting: str = "iterations"
    retain_best: bool = True
    path_sampling: bool = True
    pool_sites: bool = False

    def validate(self):
        _require(self.iterations >= 1, "train.iterations", "must be >= 1")
        _require(self.rounds >= 0, "train.rounds", "must be >= 0")
        _require(self.local_iterations >= 1, "train.local_iterations", "must be >= 1")
        _require(self.sn_train_multiplier >= 1, "train.sn_train_multiplier",
                 "must be >= 1")
        _require(self.optimizer in ("sgd", "adam", "novograd"), "train.optimizer",
                 f"unknown optimizer {self.optimizer!r}")
        _require(self.loss in ("combined", "dice"), "train.loss",
                 f"unknown loss {self.loss!r}")
        _require(self.lr > 0, "train.lr", "must be positive")
        _require(self.weighting in ("iterations", "fixed"), "train.weighting",
                 f"unknown weighting {self.weighting!r}")


@dataclass
class AdaptSection:
    method: str = "gradient"  # or "exhaustive"
    epochs: int = 1
    lr: float = 1e-3
    budget: int = 4096

    def validate(self):
        _require(self.method in ("gradient", "exhaustive"), "adapt.method",
                 f"unknown method {self.method!r}")
        _require(self.epochs >= 1, "adapt.epochs", "must be >= 1")
        _require(self.lr > 0, "adapt.lr", "must be positive")
        _require(self.budget >= 1, "adapt.budget", "must be >= 1")


@dataclass
class ExperimentConfig:
    mode: str = "sn-fed"
    seed: int = 1
    output_dir: str = "runs/run"
    data_dir: str = "data"
    model_run: str | None = None  # adapt/crosseval: the train run to load
    adapt_run: str | None = None  # crosseval: use this run's chosen paths
    data: DataSection = field(default_factory=DataSection)
    supernet: SupernetSection = field(default_factory=SupernetSection)
    train: TrainSection = field(default_factory=TrainSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)

    def validate(self, for_mode: str | None = None):
        mode = for_mode or self.mode
        _require(mode in MODES, "mode", f"must be one of {MODES}, got {mode!r}")
        self.data.validate()
        self.supernet.validate()
        self.train.validate()
        self.adapt.validate()
        if self.supernet.config_file is not None:
            _require(Path(self.supernet.config_file).exists(),
                     "supernet.config_file",
                     f"file {self.supernet.config_file!r} does not exist")
        if mode in ("adapt", "crosseval"):
            _require(self.model_run is not None, "model_run",
                     f"mode {mode!r} needs a train run to load models from")

    # -- (de)serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "data_dir": self.data_dir,
            "model_run": self.model_run,
            "adapt_run": self.adapt_run,
            "data": {
                "image_size": list(self.data.image_size),
                "generation_seed": self.data.generation_seed,
                "split_seed": self.data.split_seed,
                "split_fractions": list(self.data.split_fractions),
                "normalize": self.data.normalize,
                "sites": [s.to_dict() for s in self.data.sites],
            },
            "supernet": {
                "preset": self.supernet.preset,
                "base_width": self.supernet.base_width,
                "in_channels": self.supernet.in_channels,
                "classes": self.supernet.classes,
                "config_file": self.supernet.config_file,
            },
            "train": dict(
                iterations=self.train.iterations,
                rounds=self.train.rounds,
                local_iterations=self.train.local_iterations,
                sn_train_multiplier=self.train.sn_train_multiplier,
                optimizer=self.train.optimizer,
                lr=self.train.lr,
                crops_per_image=self.train.crops_per_image,
                images_per_batch=self.train.images_per_batch,
                crop_size=list(self.train.crop_size),
                loss=self.train.loss,
                smooth=self.train.smooth,
                augment=self.train.augment,
                aug_shift=self.train.aug_shift,
                aug_contrast=self.train.aug_contrast,
                aug_noise=self.train.aug_noise,
                weighting=self.train.weighting,
                retain_best=self.train.retain_best,
                path_sampling=self.train.path_sampling,
                pool_sites=self.train.pool_sites,
            ),
            "adapt": {
                "method": self.adapt.method,
                "epochs": self.adapt.epochs,
                "lr": self.adapt.lr,
                "budget": self.adapt.budget,
            },
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls()
        known = {"mode", "seed", "output_dir", "data_dir", "model_run",
                 "adapt_run", "data", "supernet", "train", "adapt"}
        for key in d:
            if key not in known:
                raise ConfigError(f"config field {key!r}: unknown key")
        for key in ("mode", "output_dir", "data_dir", "model_run", "adapt_run"):
            if key in d and d[key] is not None:
                setattr(cfg, key, str(d[key]))
        if "seed" in d:
            cfg.seed = int(d["seed"])
        sub = d.get("data", {})
        for key in ("generation_seed", "split_seed"):
            if key in sub:
                setattr(cfg.data, key, int(sub[key]))
        if "image_size" in sub:
            cfg.data.image_size = tuple(int(v) for v in sub["image_size"])
        if "split_fractions" in sub:
            cfg.data.split_fractions = tuple(float(v) for v in sub["split_fractions"])
        if "normalize" in sub:
            cfg.data.normalize = bool(sub["normalize"])
        if "sites" in sub:
            cfg.data.sites = [SiteProfile.from_dict(s) for s in sub["sites"]]
        sub = d.get("supernet", {})
        for key, cast in (("preset", str), ("base_width", int),
                          ("in_channels", int), ("classes", int)):
            if key in sub and sub[key] is not None:
                setattr(cfg.supernet, key, cast(sub[key]))
        if sub.get("config_file"):
            cfg.supernet.config_file = str(sub["config_file"])
        sub = d.get("train", {})
        casts = dict(iterations=int, rounds=int, local_iterations=int,
                     sn_train_multiplier=int, optimizer=str, lr=float,
                     crops_per_image=int, images_per_batch=int, loss=str,
                     smooth=float, augment=bool, aug_shift=float,
                     aug_contrast=float, aug_noise=float, weighting=str,
                     retain_best=bool, path_sampling=bool, pool_sites=bool)
        for key, cast in casts.items():
            if key in sub:
                setattr(cfg.train, key, cast(sub[key]))
        if "crop_size" in sub:
            cfg.train.crop_size = tuple(int(v) for v in sub["crop_size"])
        sub = d.get("adapt", {})
        for key, cast in (("method", str), ("epochs", int), ("lr", float),
                          ("budget", int)):
            if key in sub:
                setattr(cfg.adapt, key, cast(sub[key]))
        return cfg

    def save(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path!r} does not exist")
        with open(p) as f:
            raw = yaml.safe_load(f)
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path!r} is not a key/value document")
        return cls.from_dict(raw)
