"""Image-gradient operator, resampling, and PNG I/O.

Images are numpy arrays of shape (H, W, C) with C in {1, 3}, values nominally
in [0, 1]. The gradient map of an image is the per-channel magnitude of
central differences,

    Ix(x, y) = I(x+1, y) - I(x-1, y)
    Iy(x, y) = I(x, y+1) - I(x, y-1)
    M(I)     = sqrt(Ix^2 + Iy^2 + eps)

with replicate padding at the borders and a small eps inside the square root
so the operator stays differentiable on flat regions. The same stencil is
exposed as a graph op over NCHW tensors for use inside losses and networks.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage

from . import nn
from .nn import Tensor

GRAD_EPS = 1e-6

RESAMPLE_SCALES = (0.25, 4.0)


class ImageError(ValueError):
    pass


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageError(f"{name} must be (H, W, C) with C in {{1, 3}}, got {img.shape}")
    if not np.isfinite(img).all():
        raise ImageError(f"{name} contains NaN or Inf values")
    return img.astype(np.float64, copy=False)


# -- gradient-map stencil (numpy kernels, NCHW) -------------------------------

def _central_diffs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replicate-padded central differences along W (Ix) and H (Iy)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    ix = xp[:, :, 1:-1, 2:] - xp[:, :, 1:-1, :-2]
    iy = xp[:, :, 2:, 1:-1] - xp[:, :, :-2, 1:-1]
    return ix, iy


def grad_mag_nchw(x: np.ndarray, eps: float = GRAD_EPS) -> np.ndarray:
    ix, iy = _central_diffs(x)
    return np.sqrt(ix * ix + iy * iy + eps)


def grad_mag_backward_nchw(x: np.ndarray, upstream: np.ndarray,
                           eps: float = GRAD_EPS) -> np.ndarray:
    """d(sum(upstream * M(x)))/dx for the replicate-padded stencil."""
    ix, iy = _central_diffs(x)
    m = np.sqrt(ix * ix + iy * iy + eps)
    gx = upstream * ix / m
    gy = upstream * iy / m

    n, c, h, w = x.shape
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    dxp[:, :, 1:-1, 2:] += gx
    dxp[:, :, 1:-1, :-2] -= gx
    dxp[:, :, 2:, 1:-1] += gy
    dxp[:, :, :-2, 1:-1] -= gy
    # fold replicate padding back onto the border pixels
    dx = dxp[:, :, 1:-1, 1:-1].copy()
    dx[:, :, 0, :] += dxp[:, :, 0, 1:-1]
    dx[:, :, -1, :] += dxp[:, :, -1, 1:-1]
    dx[:, :, :, 0] += dxp[:, :, 1:-1, 0]
    dx[:, :, :, -1] += dxp[:, :, 1:-1, -1]
    dx[:, :, 0, 0] += dxp[:, :, 0, 0]
    dx[:, :, 0, -1] += dxp[:, :, 0, -1]
    dx[:, :, -1, 0] += dxp[:, :, -1, 0]
    dx[:, :, -1, -1] += dxp[:, :, -1, -1]
    return dx


def _check_min_size(h: int, w: int):
    if h < 3 or w < 3:
        raise ImageError(f"gradient map undefined below 3x3, got {h}x{w}")


def extract_gradient(img: np.ndarray, epsilon: float = GRAD_EPS) -> np.ndarray:
    """Per-channel gradient magnitude of an (H, W, C) image."""
    img = validate_image(img)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_min_size(img.shape[0], img.shape[1])
    x = img.transpose(2, 0, 1)[None, ...]
    return grad_mag_nchw(x, epsilon)[0].transpose(1, 2, 0)


def extract_gradient_backward(img: np.ndarray, upstream: np.ndarray,
                              epsilon: float = GRAD_EPS) -> np.ndarray:
    """Gradient of sum(upstream * extract_gradient(img)) w.r.t. img."""
    img = validate_image(img)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != img.shape:
        raise ImageError(f"upstream shape {upstream.shape} != image shape {img.shape}")
    _check_min_size(img.shape[0], img.shape[1])
    x = img.transpose(2, 0, 1)[None, ...]
    u = upstream.transpose(2, 0, 1)[None, ...]
    return grad_mag_backward_nchw(x, u, epsilon)[0].transpose(1, 2, 0)


def gradient_map(x: Tensor, epsilon: float = GRAD_EPS) -> Tensor:
    """Differentiable gradient magnitude of an NCHW tensor batch."""
    if x.data.ndim != 4:
        raise ImageError("gradient_map expects an NCHW tensor")
    _check_min_size(x.data.shape[2], x.data.shape[3])
    out_data = grad_mag_nchw(x.data, epsilon)
    x_data = x.data

    def backward(g):
        return (grad_mag_backward_nchw(x_data, g, epsilon),)

    return Tensor._from_op(out_data, (x,), backward)


# -- bicubic resampling --------------------------------------------------------

def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    at2, at3 = at * at, at * at * at
    w = np.where(at <= 1.0, (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0,
                 np.where(at < 2.0, a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a, 0.0))
    return w


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix mapping n_in samples to n_out along one axis.

    Pixel centers are aligned; for downscaling the kernel is stretched by the
    inverse scale (anti-aliasing), the convention of common image toolchains.
    """
    scale = n_out / n_in
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / scale - 0.5
        lo = int(np.floor(center - support)) + 1
        hi = int(np.floor(center + support)) + 1
        idx = np.arange(lo, hi)
        w = _cubic_kernel((center - idx) * kscale)
        idx = np.clip(idx, 0, n_in - 1)  # replicate edges
        np.add.at(mat[i], idx, w)
        mat[i] /= mat[i].sum()
    return mat


def bicubic_resample(img: np.ndarray, scale: float) -> np.ndarray:
    """Bicubic rescale of an (H, W, C) image by 1/4 or 4, clamped to [0, 1]."""
    img = validate_image(img)
    if not any(np.isclose(scale, s) for s in RESAMPLE_SCALES):
        raise ImageError(f"scale must be one of {RESAMPLE_SCALES}, got {scale}")
    h, w, c = img.shape
    h_out, w_out = h * scale, w * scale
    if abs(h_out - round(h_out)) > 1e-9 or abs(w_out - round(w_out)) > 1e-9:
        raise ImageError(f"non-integral output size {h_out}x{w_out} for input {h}x{w}")
    h_out, w_out = int(round(h_out)), int(round(w_out))
    rows = _resample_matrix(h, h_out)
    cols = _resample_matrix(w, w_out)
    out = np.einsum("oh,hwc->owc", rows, img)
    out = np.einsum("pw,hwc->hpc", cols, out)
    return np.clip(out, 0.0, 1.0)


# -- PNG I/O --------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into a float (H, W, C) array."""
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageError(f"{path}: expected PNG, got {im.format}")
            if im.mode not in ("L", "RGB"):
                raise ImageError(f"{path}: unsupported mode {im.mode!r} "
                                 "(8-bit L or RGB only)")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ImageError(f"{path}: unreadable image ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Quantize to 8 bits (round(clamp(v) * 255)) and write a PNG."""
    img = validate_image(img)
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.shape[2] == 1:
        PILImage.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(q, mode="RGB").save(path, format="PNG")


def normalize_for_display(gmap: np.ndarray) -> np.ndarray:
    """Min-max normalize a gradient map for visualization (never for math)."""
    gmap = np.asarray(gmap, dtype=np.float64)
    lo, hi = gmap.min(), gmap.max()
    if hi - lo < 1e-12:
        return np.zeros_like(gmap)
    return (gmap - lo) / (hi - lo)
