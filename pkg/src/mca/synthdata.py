"""Synthetic camouflage-style and shadow-style scene generation.

Every sample is a pure function of (SceneSpec, integer seed).  Backgrounds
are octave-summed value noise; foregrounds are wobbly blob unions.  The
contrast gap controls how separable foreground statistics are from the
background: at gap 0 the foreground texture is moment-matched to the
background (statistically camouflaged), at larger gaps the foreground mean
is shifted away from the background mean by the gap itself.  The shift
direction is drawn per image (camouflage kind), so region detection cannot
be reduced to a single global intensity threshold; the shadow kind always
dims (multiplicative, proportional to the gap).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DataParseError
from .netpbm import load_mask, load_ppm, save_pgm, save_ppm

OCCUPANCY_RANGE = (0.05, 0.60)   # valid foreground fraction per mask
TEXTURE_RANGE = (0.15, 0.85)     # background texture is stretched into this
SHADOW_STRENGTH = 0.92           # max multiplicative dimming at gap 1
TINT_RANGE = (0.92, 1.08)        # per-channel color tint draw range
FREQUENCY_JITTER = (-1, 1)       # per-image offset added to base_frequency
MAX_ATTEMPTS = 10                # mask regeneration budget per sample

KINDS = ("camouflage", "shadow")


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "camouflage"
    image_size: int = 64
    base_frequency: int = 8
    octaves: int = 3
    noise_amplitude: float = 0.5   # per-octave amplitude decay
    blob_count_range: Tuple[int, int] = (1, 3)
    radius_range: Tuple[float, float] = (0.16, 0.30)  # fractions of the side
    contrast_gap: float = 0.3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"scene kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.contrast_gap <= 1.0:
            raise ConfigError(f"contrast gap must lie in [0, 1], got {self.contrast_gap}")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")
        if self.base_frequency < 1 or self.octaves < 1:
            raise ConfigError("base_frequency and octaves must be >= 1")
        if not 1 <= self.blob_count_range[0] <= self.blob_count_range[1]:
            raise ConfigError(f"bad blob count range {self.blob_count_range}")
        lo, hi = self.radius_range
        if not 0.0 < lo <= hi < 0.5:
            raise ConfigError(f"bad radius range {self.radius_range}")


@dataclass
class Sample:
    image: np.ndarray   # [3, H, W] float32 in [0, 1]
    mask: np.ndarray    # [H, W] uint8 {0, 1}
    id: str
    seed: int


def _bilinear_lattice(lattice: np.ndarray, size: int) -> np.ndarray:
    """Upsample an (n+1) x (n+1) control lattice to size x size."""
    n = lattice.shape[0] - 1
    coords = (np.arange(size) + 0.5) / size * n
    i0 = np.minimum(coords.astype(int), n - 1)
    frac = coords - i0
    i1 = i0 + 1
    rows = lattice[i0][:, i0] * (1 - frac)[:, None] * (1 - frac)[None, :]
    rows += lattice[i0][:, i1] * (1 - frac)[:, None] * frac[None, :]
    rows += lattice[i1][:, i0] * frac[:, None] * (1 - frac)[None, :]
    rows += lattice[i1][:, i1] * frac[:, None] * frac[None, :]
    return rows


def _value_noise(
    rng: np.random.Generator, spec: SceneSpec, base_frequency: int
) -> np.ndarray:
    """Octave-summed value noise stretched into TEXTURE_RANGE."""
    acc = np.zeros((spec.image_size, spec.image_size))
    amp, total, freq = 1.0, 0.0, base_frequency
    for _ in range(spec.octaves):
        lattice = rng.random((freq + 1, freq + 1))
        acc += amp * _bilinear_lattice(lattice, spec.image_size)
        total += amp
        amp *= spec.noise_amplitude
        freq *= 2
    acc /= total
    lo, hi = TEXTURE_RANGE
    span = acc.max() - acc.min()
    return lo + (hi - lo) * (acc - acc.min()) / (span + 1e-12)


def _blob_mask(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Union of 1..n wobbly-radius blobs as a boolean mask."""
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    n_blobs = int(rng.integers(spec.blob_count_range[0], spec.blob_count_range[1] + 1))
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.18, 0.82, 2) * size
        radius = rng.uniform(*spec.radius_range) * size
        amps = rng.uniform(0.2, 1.0, 3)
        phases = rng.uniform(0.0, 2.0 * np.pi, 3)
        theta = np.arctan2(yy - cy, xx - cx)
        wobble = np.zeros_like(theta)
        for k in range(3):
            wobble += amps[k] * np.cos((k + 1) * theta + phases[k])
        wobble *= 0.30 / amps.sum()
        dist = np.hypot(yy - cy, xx - cx)
        mask |= dist <= radius * (1.0 + wobble)
    return mask


def _render(rng: np.random.Generator, mask: np.ndarray, spec: SceneSpec) -> np.ndarray:
    gap = spec.contrast_gap
    # Per-image texture scale: foreground and background share it, so the
    # re-textured foreground stays in the same distribution family.
    jitter = int(rng.integers(FREQUENCY_JITTER[0], FREQUENCY_JITTER[1] + 1))
    freq = max(1, spec.base_frequency + jitter)
    bg = _value_noise(rng, spec, freq)
    if spec.kind == "camouflage":
        fg0 = _value_noise(rng, spec, freq)
        inside, outside = fg0[mask], bg[~mask]
        # Moment-match the foreground texture to the background region so the
        # two regions share mean/std exactly at gap 0, then shift the
        # foreground mean by the gap in a per-image random direction.
        matched = (fg0 - inside.mean()) / (inside.std() + 1e-9)
        matched = matched * outside.std() + outside.mean()
        direction = 1.0 if rng.random() < 0.5 else -1.0
        fg = np.clip(matched + direction * gap, 0.0, 1.0)
        gray = np.where(mask, fg, bg)
    else:
        gray = bg * np.where(mask, 1.0 - SHADOW_STRENGTH * gap, 1.0)
    tints = rng.uniform(*TINT_RANGE, 3)
    img = np.clip(gray[None, :, :] * tints[:, None, None], 0.0, 1.0)
    return img.astype(np.float32)


def _sample_rng(seed: int, attempt: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
    )


def generate_sample(spec: SceneSpec, seed: int, sample_id: str = "") -> Sample:
    """Deterministic sample; regenerates degenerate masks on derived seeds."""
    lo, hi = OCCUPANCY_RANGE
    for attempt in range(MAX_ATTEMPTS):
        rng = _sample_rng(seed, attempt)
        mask = _blob_mask(rng, spec)
        occupancy = mask.mean()
        if lo <= occupancy <= hi:
            image = _render(rng, mask, spec)
            return Sample(
                image=image,
                mask=mask.astype(np.uint8),
                id=sample_id or f"sample_{seed}",
                seed=seed,
            )
    raise ContractError(
        f"mask occupancy outside [{lo}, {hi}] after {MAX_ATTEMPTS} attempts (seed {seed})"
    )


def _derived_seed(master_seed: int, split_index: int, i: int) -> int:
    words = np.random.SeedSequence(
        entropy=master_seed, spawn_key=(split_index, i)
    ).generate_state(2)
    return (int(words[0]) << 32) | int(words[1])


def generate_split(
    spec: SceneSpec, n_train: int, n_test: int, seed: int
) -> Tuple[List[Sample], List[Sample]]:
    """Disjoint seed streams for train and test; unique ids."""
    if n_train < 1 or n_test < 1:
        raise ContractError("split counts must be >= 1")
    train = [
        generate_sample(spec, _derived_seed(seed, 0, i), f"train_{i:04d}")
        for i in range(n_train)
    ]
    test = [
        generate_sample(spec, _derived_seed(seed, 1, i), f"test_{i:04d}")
        for i in range(n_test)
    ]
    return train, test


# ---------------------------------------------------------------------------
# dataset directory layout: root/{train,test}/{images,masks}/<id>.{ppm,pgm}
# plus a per-split manifest.txt with one id per line
# ---------------------------------------------------------------------------

def write_split(root: str, split: str, samples: List[Sample]) -> None:
    base = os.path.join(root, split)
    os.makedirs(os.path.join(base, "images"), exist_ok=True)
    os.makedirs(os.path.join(base, "masks"), exist_ok=True)
    for s in samples:
        save_ppm(os.path.join(base, "images", f"{s.id}.ppm"), s.image)
        save_pgm(os.path.join(base, "masks", f"{s.id}.pgm"), s.mask)
    with open(os.path.join(base, "manifest.txt"), "w", encoding="ascii") as f:
        f.writelines(s.id + "\n" for s in samples)


def write_dataset(root: str, train: List[Sample], test: List[Sample]) -> None:
    write_split(root, "train", train)
    write_split(root, "test", test)


def load_split(root: str, split: str) -> List[Sample]:
    """Load samples in manifest order."""
    base = os.path.join(root, split)
    manifest = os.path.join(base, "manifest.txt")
    if not os.path.exists(manifest):
        raise DataParseError(f"missing manifest: {manifest}")
    with open(manifest, "r", encoding="ascii") as f:
        ids = [line.strip() for line in f if line.strip()]
    if not ids:
        raise DataParseError(f"empty manifest: {manifest}")
    samples = []
    for sid in ids:
        image = load_ppm(os.path.join(base, "images", f"{sid}.ppm"))
        mask = load_mask(os.path.join(base, "masks", f"{sid}.pgm"))
        samples.append(Sample(image=image, mask=mask, id=sid, seed=-1))
    return samples
