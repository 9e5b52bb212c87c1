"""Synthetic multi-site segmentation data with controllable site shift.

Each site renders soft-boundary ellipsoidal foreground objects over a flat
background, with per-site intensity offset, contrast gain, noise level,
and object shape statistics standing in for scanner/protocol variation.
The object intensity profile is a sigmoid ramp in normalized ellipse
radius, so voxels inside the mask (radius <= 1) are strictly brighter
than any background voxel of a noise-free image.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import yaml

SOFT_EDGE = 0.08
BACKGROUND_LEVEL = 0.5

# realized split proportions behind the nominal 70/10/20 protocol; with
# largest-remainder rounding these reproduce the reference cohort sizes
# (243 -> 172/23/48) while staying exact on round case counts
SPLIT_FRACTIONS = (172.0 / 243.0, 23.0 / 243.0, 48.0 / 243.0)


@dataclass(frozen=True)
class SiteProfile:
    site_id: str
    num_cases: int
    offset: float = 0.0
    gain: float = 1.0
    noise_sigma: float = 0.0
    ecc_range: tuple[float, float] = (1.0, 1.6)  # major/minor semi-axis ratio
    size_range: tuple[float, float] = (0.18, 0.32)  # major semi-axis / image extent

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError(f"site {self.site_id!r}: noise sigma must be >= 0")
        lo, hi = self.size_range
        if not (0 < lo <= hi < 0.5):
            raise ValueError(
                f"site {self.site_id!r}: size range {self.size_range} outside image bounds"
            )

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "num_cases": self.num_cases,
            "offset": self.offset,
            "gain": self.gain,
            "noise_sigma": self.noise_sigma,
            "ecc_range": list(self.ecc_range),
            "size_range": list(self.size_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SiteProfile":
        return cls(
            site_id=d["site_id"],
            num_cases=int(d["num_cases"]),
            offset=float(d.get("offset", 0.0)),
            gain=float(d.get("gain", 1.0)),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            ecc_range=tuple(d.get("ecc_range", (1.0, 1.6))),
            size_range=tuple(d.get("size_range", (0.18, 0.32))),
        )


@dataclass
class Case:
    image: np.ndarray  # (1, spatial...)
    mask: np.ndarray  # (spatial...), values in {0, 1}
    site_id: str
    case_id: str

    def __post_init__(self):
        if self.image.shape[1:] != self.mask.shape:
            raise ValueError(
                f"case {self.case_id!r}: image spatial dims {self.image.shape[1:]} "
                f"!= mask dims {self.mask.shape}"
            )
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError(f"case {self.case_id!r}: mask is not binary")


@dataclass
class SplitSet:
    train: list[Case] = field(default_factory=list)
    validation: list[Case] = field(default_factory=list)
    test: list[Case] = field(default_factory=list)

    def all_cases(self) -> list[Case]:
        return self.train + self.validation + self.test


def _rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def _render_objects(rng: np.random.Generator, shape: tuple[int, ...],
                    profile: SiteProfile):
    d = len(shape)
    extent = min(shape)
    grid = np.stack(
        np.meshgrid(*[np.arange(s, dtype=np.float64) + 0.5 for s in shape],
                    indexing="ij"),
        axis=-1,
    )
    intensity = np.zeros(shape, dtype=np.float64)
    mask = np.zeros(shape, dtype=np.float64)
    n_obj = int(rng.integers(1, 3))
    for _ in range(n_obj):
        major = extent * rng.uniform(*profile.size_range)
        ecc = rng.uniform(*profile.ecc_range)
        semi = np.full(d, major / ecc)
        semi[0] = major
        rot = _rotation(rng, d)
        margin = major + 2.0
        center = np.array([
            rng.uniform(min(margin, s / 2), max(s - margin, s / 2)) for s in shape
        ])
        rel = (grid - center) @ rot / semi
        r = np.sqrt((rel * rel).sum(axis=-1))
        f = 1.0 / (1.0 + np.exp((r - 1.0) / SOFT_EDGE))
        intensity = np.maximum(intensity, f)
        mask = np.maximum(mask, (r <= 1.0).astype(np.float64))
    return intensity, mask


def generate_site(profile: SiteProfile, seed: int,
                  image_size: tuple[int, ...] = (32, 32)) -> list[Case]:
    """Deterministic synthetic cohort for one site."""
    cases = []
    site_key = zlib.crc32(profile.site_id.encode())
    for i in range(profile.num_cases):
        rng = np.random.default_rng([seed, site_key, i])
        intensity, mask = _render_objects(rng, tuple(image_size), profile)
        img = BACKGROUND_LEVEL + profile.offset + profile.gain * intensity
        if profile.noise_sigma > 0:
            img = img + rng.normal(0.0, profile.noise_sigma, size=img.shape)
        cases.append(Case(image=img[None].astype(np.float64), mask=mask,
                          site_id=profile.site_id,
                          case_id=f"{profile.site_id}{i:03d}"))
    return cases


def split(cases: list[Case], seed: int,
          fractions: tuple[float, float, float] = SPLIT_FRACTIONS) -> SplitSet:
    """Random disjoint train/validation/test partition.

    Counts come from largest-remainder rounding of the given fractions, so
    the three parts always cover every case exactly once.
    """
    n = len(cases)
    if n < 3:
        raise ValueError(f"need at least 3 cases to split, got {n}")
    raw = [n * f for f in fractions]
    counts = [math.floor(r) for r in raw]
    remainders = [r - c for r, c in zip(raw, counts)]
    for i in sorted(range(3), key=lambda i: -remainders[i])[: n - sum(counts)]:
        counts[i] += 1
    order = np.random.default_rng(seed).permutation(n)
    picked = [cases[i] for i in order]
    return SplitSet(
        train=picked[: counts[0]],
        validation=picked[counts[0]: counts[0] + counts[1]],
        test=picked[counts[0] + counts[1]:],
    )


def normalize(case: Case) -> Case:
    """Zero-mean unit-variance over the non-zero voxels, per image."""
    img = case.image
    nz = img != 0
    if not nz.any():
        raise ValueError(f"case {case.case_id!r}: image is all zero")
    vals = img[nz]
    mu = vals.mean()
    sd = vals.std()
    if sd == 0:
        raise ValueError(
            f"case {case.case_id!r}: non-zero intensities are constant ({vals[0]})"
        )
    out = img.copy()
    out[nz] = (vals - mu) / sd
    return Case(image=out, mask=case.mask.copy(), site_id=case.site_id,
                case_id=case.case_id)


def sample_minibatch(cases: list[Case], crops_per_image: int, images_per_batch: int,
                     crop_size: tuple[int, ...], rng: np.random.Generator):
    """Aligned random crops: images_per_batch cases times crops_per_image
    offsets each. Returns (images, masks) stacked along the batch axis."""
    if not cases:
        raise ValueError("cannot sample a minibatch from an empty case list")
    dims = cases[0].mask.shape
    crop_size = tuple(int(c) for c in crop_size)
    if len(crop_size) != len(dims):
        raise ValueError(
            f"crop rank {len(crop_size)} does not match image rank {len(dims)}"
        )
    for a, (c, s) in enumerate(zip(crop_size, dims)):
        if c > s:
            raise ValueError(
                f"crop extent {c} exceeds image extent {s} on spatial axis {a}"
            )
    imgs, masks = [], []
    for _ in range(images_per_batch):
        case = cases[int(rng.integers(0, len(cases)))]
        for _ in range(crops_per_image):
            offs = tuple(int(rng.integers(0, s - c + 1))
                         for c, s in zip(crop_size, dims))
            sl = tuple(slice(o, o + c) for o, c in zip(offs, crop_size))
            imgs.append(case.image[(slice(None),) + sl])
            masks.append(case.mask[sl])
    return np.stack(imgs), np.stack(masks)


def augment(images: np.ndarray, masks: np.ndarray, rng: np.random.Generator,
            shift: float = 0.1, contrast: float = 0.1, noise_sigma: float = 0.05):
    """Per-crop intensity shift, contrast scaling about the crop mean, and
    additive Gaussian noise. Masks pass through untouched."""
    out = images.copy()
    for b in range(out.shape[0]):
        crop = out[b]
        g = rng.uniform(1.0 - contrast, 1.0 + contrast)
        s = rng.uniform(-shift, shift)
        if g != 1.0 or s != 0.0:
            m = crop.mean()
            crop = m + g * (crop - m) + s
        if noise_sigma > 0:
            crop = crop + rng.normal(0.0, noise_sigma, size=crop.shape)
        out[b] = crop
    return out, masks


# ----------------------------------------------------------------------
# on-disk case container and site manifest
# ----------------------------------------------------------------------

_MAGIC = b"FSNCASE1"


def save_case(path, case: Case):
    img = np.ascontiguousarray(case.image, dtype=np.float64)
    msk = np.ascontiguousarray(case.mask, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        sid = case.site_id.encode()
        cid = case.case_id.encode()
        f.write(struct.pack("<II", len(sid), len(cid)))
        f.write(sid)
        f.write(cid)
        f.write(struct.pack("<I", img.ndim))
        f.write(struct.pack(f"<{img.ndim}I", *img.shape))
        f.write(img.tobytes())
        f.write(msk.tobytes())


def load_case(path) -> Case:
    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a case container")
        ls, lc = struct.unpack("<II", f.read(8))
        sid = f.read(ls).decode()
        cid = f.read(lc).decode()
        ndim = struct.unpack("<I", f.read(4))[0]
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        img = np.frombuffer(f.read(8 * int(np.prod(shape))), dtype=np.float64)
        img = img.reshape(shape).copy()
        msk = np.frombuffer(f.read(8 * int(np.prod(shape[1:]))), dtype=np.float64)
        msk = msk.reshape(shape[1:]).copy()
    return Case(image=img, mask=msk, site_id=sid, case_id=cid)


def save_site(directory, profile: SiteProfile, cases: list[Case]):
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for case in cases:
        fname = f"{case.case_id}.case"
        save_case(directory / fname, case)
        files.append(fname)
    with open(directory / "manifest.yaml", "w") as f:
        yaml.safe_dump({"profile": profile.to_dict(), "cases": files},
                       f, sort_keys=False)


def load_site(directory) -> tuple[SiteProfile, list[Case]]:
    with open(directory / "manifest.yaml") as f:
        manifest = yaml.safe_load(f)
    profile = SiteProfile.from_dict(manifest["profile"])
    cases = [load_case(directory / fname) for fname in manifest["cases"]]
    return profile, cases
