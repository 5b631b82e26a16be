"""Evaluation: PSNR, single-scale SSIM, gradient-map L1, comparison grids.

PSNR defaults to RGB mean-squared error with a 4-pixel border crop (one
upscale factor); SSIM always runs on the ITU-R 601 luma with the standard
11x11 Gaussian window. Both channel conventions are switchable and the
report records which one was used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage, ImageDraw

from .gradops import GRAD_EPS, extract_gradient, validate_image

PSNR_SENTINEL_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_luma(img: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of an (H, W, C) image; grayscale passes through."""
    img = validate_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA_WEIGHTS


def _crop_border(img: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return img
    if 2 * border >= min(img.shape[0], img.shape[1]):
        raise ValueError(f"border {border} too large for {img.shape[0]}x{img.shape[1]}")
    return img[border:-border, border:-border]


def psnr(a: np.ndarray, b: np.ndarray, border: int = 4,
         channels: str = "rgb") -> float:
    """10*log10(1/MSE) on the [0,1] scale, capped at the 99 dB sentinel."""
    a, b = validate_image(a), validate_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if channels not in ("rgb", "luma"):
        raise ValueError("channels must be 'rgb' or 'luma'")
    if channels == "luma":
        a, b = to_luma(a)[:, :, None], to_luma(b)[:, :, None]
    a = _crop_border(a, border)
    b = _crop_border(b, border)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_SENTINEL_DB)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Gaussian-weighted mean over every valid window position."""
    k = window.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM on luma, mean over valid window positions."""
    a, b = validate_image(a), validate_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    ya, yb = to_luma(a), to_luma(b)
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}px SSIM window")
    w = _gaussian_window()
    c1 = SSIM_K1 ** 2  # dynamic range is 1.0
    c2 = SSIM_K2 ** 2
    mu_a = _windowed_mean(ya, w)
    mu_b = _windowed_mean(yb, w)
    var_a = _windowed_mean(ya * ya, w) - mu_a * mu_a
    var_b = _windowed_mean(yb * yb, w) - mu_b * mu_b
    cov = _windowed_mean(ya * yb, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def gm_l1(a: np.ndarray, b: np.ndarray, epsilon: float = GRAD_EPS) -> float:
    """Mean L1 distance between the two images' gradient maps."""
    a, b = validate_image(a), validate_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(extract_gradient(a, epsilon)
                                - extract_gradient(b, epsilon))))


# -- report ----------------------------------------------------------------------

@dataclass
class EvalReport:
    names: list = field(default_factory=list)
    psnr_values: list = field(default_factory=list)
    ssim_values: list = field(default_factory=list)
    gm_l1_values: list = field(default_factory=list)
    border: int = 4
    channels: str = "rgb"

    def add(self, name: str, psnr_db: float, ssim_value: float, gm: float):
        self.names.append(name)
        self.psnr_values.append(psnr_db)
        self.ssim_values.append(ssim_value)
        self.gm_l1_values.append(gm)

    @property
    def count(self) -> int:
        return len(self.names)

    def means(self) -> dict:
        return {"psnr": float(np.mean(self.psnr_values)),
                "ssim": float(np.mean(self.ssim_values)),
                "gm_l1": float(np.mean(self.gm_l1_values))}

    def to_text_table(self) -> str:
        lines = [f"{'name':<28}{'psnr':>9}{'ssim':>9}{'gm_l1':>10}"]
        for i, n in enumerate(self.names):
            lines.append(f"{n:<28}{self.psnr_values[i]:>9.3f}"
                         f"{self.ssim_values[i]:>9.4f}{self.gm_l1_values[i]:>10.5f}")
        m = self.means()
        lines.append(f"{'mean':<28}{m['psnr']:>9.3f}{m['ssim']:>9.4f}{m['gm_l1']:>10.5f}")
        lines.append(f"({self.count} images, border={self.border}, channels={self.channels})")
        return "\n".join(lines)

    def to_jsonl(self) -> str:
        lines = []
        for i, n in enumerate(self.names):
            lines.append(json.dumps({
                "name": n, "psnr": self.psnr_values[i],
                "ssim": self.ssim_values[i], "gm_l1": self.gm_l1_values[i],
                "border": self.border, "channels": self.channels}, sort_keys=True))
        lines.append(json.dumps({"name": "__mean__", **self.means(),
                                 "count": self.count, "border": self.border,
                                 "channels": self.channels}, sort_keys=True))
        return "\n".join(lines) + "\n"


def evaluate_pair(sr: np.ndarray, hr: np.ndarray, border: int = 4,
                  channels: str = "rgb") -> tuple[float, float, float]:
    return (psnr(sr, hr, border=border, channels=channels),
            ssim(sr, hr), gm_l1(sr, hr))


# -- qualitative grids -------------------------------------------------------------

GRID_MARGIN = 4


def emit_grid(images: list, labels: list, path) -> None:
    """Write one side-by-side PNG with a text label on each tile."""
    if not images:
        raise ValueError("emit_grid needs at least one image")
    if len(labels) != len(images):
        raise ValueError("one label per image required")
    images = [validate_image(im) for im in images]
    h, w = images[0].shape[:2]
    for im in images:
        if im.shape[:2] != (h, w):
            raise ValueError("all grid images must share one size")
    total_w = len(images) * w + (len(images) - 1) * GRID_MARGIN
    canvas = PILImage.new("RGB", (total_w, h), (255, 255, 255))
    for i, im in enumerate(images):
        q = np.round(np.clip(im, 0.0, 1.0) * 255.0).astype(np.uint8)
        if q.shape[2] == 1:
            q = np.repeat(q, 3, axis=2)
        canvas.paste(PILImage.fromarray(q, "RGB"), (i * (w + GRID_MARGIN), 0))
    draw = ImageDraw.Draw(canvas)
    for i, label in enumerate(labels):
        x = i * (w + GRID_MARGIN) + 2
        draw.rectangle([x - 1, 1, x + 6 * len(label) + 1, 11], fill=(0, 0, 0))
        draw.text((x, 2), label, fill=(255, 255, 0))
    canvas.save(path, format="PNG")
