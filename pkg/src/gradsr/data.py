"""Dataset ingestion: LR/HR patch pairs and synthetic structured images.

LR patches are always derived on the fly by bicubic 1/4 downsampling of HR
crops, so every emitted pair satisfies the degradation model exactly and is
recomputable from the HR crop alone. The synthetic generator writes small
datasets with strong geometric structure (edges, checkers, ramps) for
overfit-style experiments where a real corpus would be overkill.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .gradops import bicubic_resample, load_image, save_image

SYNTH_KINDS = ("edges", "checker", "gradients-ramps")


@dataclass
class PairSamplerConfig:
    hr_dir: str
    lr_patch: int = 32
    batch: int = 4
    scale: int = 4
    seed: int = 0
    augment: bool = False

    def to_dict(self) -> dict:
        return {"hr_dir": str(self.hr_dir), "lr_patch": self.lr_patch,
                "batch": self.batch, "scale": self.scale, "seed": self.seed,
                "augment": self.augment}


def dihedral(img: np.ndarray, code: int) -> np.ndarray:
    """Apply one of the 8 square symmetries to an (H, W, C) image."""
    if not 0 <= code < 8:
        raise ValueError(f"dihedral code must be 0..7, got {code}")
    out = np.rot90(img, code % 4, axes=(0, 1))
    if code >= 4:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


class PairSampler:
    """Deterministic random (LR, HR) batch source over a directory of PNGs."""

    def __init__(self, cfg: PairSamplerConfig):
        self.cfg = cfg
        self.crop = cfg.lr_patch * cfg.scale
        paths = sorted(Path(cfg.hr_dir).glob("*.png"))
        if not paths:
            raise FileNotFoundError(f"no PNG files in {cfg.hr_dir}")
        self.images = []
        for p in paths:
            img = load_image(p)
            if img.shape[0] < self.crop or img.shape[1] < self.crop:
                warnings.warn(f"skipping {p.name}: {img.shape[0]}x{img.shape[1]} "
                              f"smaller than crop {self.crop}")
                continue
            self.images.append(img)
        if not self.images:
            raise ValueError(f"all images in {cfg.hr_dir} are smaller than "
                             f"{self.crop}x{self.crop}")
        self.rng = np.random.default_rng(cfg.seed)

    # full bit-generator state, enough to resume the exact crop sequence
    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state

    def _draw_one(self):
        idx = int(self.rng.integers(len(self.images)))
        img = self.images[idx]
        y = int(self.rng.integers(img.shape[0] - self.crop + 1))
        x = int(self.rng.integers(img.shape[1] - self.crop + 1))
        aug = int(self.rng.integers(8)) if self.cfg.augment else 0
        return idx, y, x, aug

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        """One batch of aligned (lr, hr) NCHW arrays in [0, 1]."""
        cfg = self.cfg
        picks = []
        seen = set()
        attempts = 0
        while len(picks) < cfg.batch:
            pick = self._draw_one()
            attempts += 1
            key = pick[:3]  # distinct crops per step, augmentation aside
            if key in seen and attempts < 20 * cfg.batch:
                continue
            seen.add(key)
            picks.append(pick)
        hr_list, lr_list = [], []
        for idx, y, x, aug in picks:
            hr = self.images[idx][y:y + self.crop, x:x + self.crop, :]
            hr = dihedral(hr, aug)
            lr = bicubic_resample(hr, 1.0 / cfg.scale)
            hr_list.append(hr.transpose(2, 0, 1))
            lr_list.append(lr.transpose(2, 0, 1))
        return np.stack(lr_list), np.stack(hr_list)


def make_pairs(cfg: PairSamplerConfig) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless deterministic stream of (lr_batch, hr_batch)."""
    sampler = PairSampler(cfg)
    while True:
        yield sampler.next_batch()


# -- synthetic datasets ----------------------------------------------------------

def _rand_color(rng, lo=0.0, hi=1.0):
    return rng.uniform(lo, hi, size=3)


def _edges_image(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.empty((size, size, 3))
    img[:] = _rand_color(rng, 0.0, 0.25)
    # filled convex polygons: intersection of half planes around a center
    for _ in range(int(rng.integers(3, 6))):
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        radius = rng.uniform(0.12, 0.3) * size
        n_sides = int(rng.integers(3, 7))
        phase = rng.uniform(0, 2 * np.pi)
        mask = np.ones((size, size), dtype=bool)
        for k in range(n_sides):
            ang = phase + 2 * np.pi * k / n_sides
            mask &= ((xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang)) < radius
        img[mask] = _rand_color(rng, 0.6, 1.0)
    # a couple of straight high-contrast bands
    for _ in range(int(rng.integers(1, 3))):
        ang = rng.uniform(0, np.pi)
        c = rng.uniform(0.2, 0.8) * size
        width = rng.uniform(0.02, 0.05) * size
        proj = xx * np.cos(ang) + yy * np.sin(ang)
        img[np.abs(proj - c) < width] = _rand_color(rng, 0.7, 1.0)
    return img


def _checker_image(rng, size: int) -> np.ndarray:
    cell = int(rng.choice([4, 8]))
    c1 = _rand_color(rng, 0.0, 0.2)
    c2 = _rand_color(rng, 0.8, 1.0)
    oy, ox = rng.integers(cell, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    parity = ((yy + oy) // cell + (xx + ox) // cell) % 2
    return np.where(parity[:, :, None] == 0, c1, c2)


def _ramp_image(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    ang = rng.uniform(0, 2 * np.pi)
    proj = (xx * np.cos(ang) + yy * np.sin(ang))
    proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-9)
    c1, c2 = _rand_color(rng), _rand_color(rng)
    return proj[:, :, None] * (c2 - c1) + c1


_SYNTH_FNS = {"edges": _edges_image, "checker": _checker_image,
              "gradients-ramps": _ramp_image}


def synth_dataset(kind: str, n: int, size: int, seed: int, out_dir) -> list:
    """Write n deterministic synthetic HR PNGs; returns the created paths."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"kind must be one of {SYNTH_KINDS}, got {kind!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        img = _SYNTH_FNS[kind](rng, size)
        path = out_dir / f"{kind.replace('-', '_')}_{i:03d}.png"
        save_image(img, path)
        paths.append(path)
    return paths
