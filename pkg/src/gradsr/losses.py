"""Training objectives: pixel, perceptual, adversarial, and gradient-space terms.

The generator objective is the weighted sum

    total_g = perceptual
            + beta_img  * pix_img   (L1 on images)
            + gamma_img * adv_img   (adversarial, image discriminator)
            + beta_gm   * pix_gm    (L1 on gradient maps of output vs target)
            + gamma_gm  * adv_gm    (adversarial, gradient-map discriminator)
            + beta_gb   * pix_gb    (L1 on the gradient branch's predicted map)

with the perceptual term carrying implicit weight 1. Adversarial terms come
in two flavors: the plain non-saturating form and the relativistic-average
form (default), both computed through numerically stable log-sigmoids.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import nn
from .disc import Discriminator
from .gradops import GRAD_EPS, gradient_map
from .nn import Conv2d, Module, Tensor, freeze, leaky_relu, softplus, tabs, tmean

GAN_MODES = ("standard", "ragan")


@dataclass
class LossWeights:
    beta_img: float = 0.01
    gamma_img: float = 0.005
    beta_gm: float = 0.01
    gamma_gm: float = 0.005
    beta_gb: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        return LossWeights(**d)


@dataclass
class LossReport:
    """Per-step scalar record; total_g must equal the recomputed weighted sum."""
    step: int
    pix_img: float = 0.0
    perceptual: float = 0.0
    adv_img: float = 0.0
    pix_gm: float = 0.0
    adv_gm: float = 0.0
    pix_gb: float = 0.0
    total_g: float = 0.0
    dis_img: float = 0.0
    dis_gm: float = 0.0
    lr: float = 0.0

    def weighted_total(self, w: LossWeights) -> float:
        return (self.perceptual + w.beta_img * self.pix_img
                + w.gamma_img * self.adv_img + w.beta_gm * self.pix_gm
                + w.gamma_gm * self.adv_gm + w.beta_gb * self.pix_gb)

    def to_json_line(self) -> str:
        import json
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)},
                          sort_keys=True)

    @staticmethod
    def from_json_line(line: str) -> "LossReport":
        import json
        return LossReport(**json.loads(line))


# -- feature extractors for the perceptual term --------------------------------

class IdentityExtractor:
    """Degenerate extractor: the perceptual loss collapses to the pixel loss."""

    def __call__(self, x: Tensor) -> Tensor:
        return x


class RandomFeatureExtractor(Module):
    """Frozen, seed-fixed stack of four stride-2 convs.

    Stands in for a pretrained perceptual network: random but fixed filters
    preserve the structure of a feature-space distance without an external
    model download.
    """

    CHANNELS = (16, 32, 64, 64)

    def __init__(self, seed: int = 7, in_channels: int = 3, dtype=np.float64):
        rng = np.random.default_rng(seed)
        chans = (in_channels,) + self.CHANNELS
        self.conv1 = Conv2d(chans[0], chans[1], 3, rng, stride=2, dtype=dtype)
        self.conv2 = Conv2d(chans[1], chans[2], 3, rng, stride=2, dtype=dtype)
        self.conv3 = Conv2d(chans[2], chans[3], 3, rng, stride=2, dtype=dtype)
        self.conv4 = Conv2d(chans[3], chans[4], 3, rng, stride=2, dtype=dtype)
        freeze(self)

    def forward(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.conv1(x))
        h = leaky_relu(self.conv2(h))
        h = leaky_relu(self.conv3(h))
        return self.conv4(h)


# -- loss terms -----------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, what: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{what}: shape mismatch {a.data.shape} vs {b.data.shape}")


def pixel_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(a, b, "pixel_loss")
    return tmean(tabs(a - b))


def perceptual_loss(sr: Tensor, hr: Tensor, extractor) -> Tensor:
    """L1 between frozen features of the output and the target.

    The target side is detached, so gradient flows into ``sr`` only.
    """
    _check_same_shape(sr, hr, "perceptual_loss")
    return tmean(tabs(extractor(sr) - extractor(hr.detach())))


def gan_d_loss(real_logits: Tensor, fake_logits: Tensor, mode: str = "ragan") -> Tensor:
    """Discriminator objective on raw logits (sigmoid applied internally)."""
    _check_mode_and_batch(real_logits, fake_logits, mode)
    if mode == "standard":
        # -E[log sigma(real)] - E[log(1 - sigma(fake))]
        return tmean(softplus(-real_logits)) + tmean(softplus(fake_logits))
    rel_real = real_logits - tmean(fake_logits)
    rel_fake = fake_logits - tmean(real_logits)
    return tmean(softplus(-rel_real)) + tmean(softplus(rel_fake))


def gan_g_loss(real_logits: Tensor, fake_logits: Tensor, mode: str = "ragan") -> Tensor:
    """Generator objective; in relativistic mode the roles are swapped."""
    _check_mode_and_batch(real_logits, fake_logits, mode)
    if mode == "standard":
        return tmean(softplus(-fake_logits))
    rel_fake = fake_logits - tmean(real_logits)
    rel_real = real_logits - tmean(fake_logits)
    return tmean(softplus(-rel_fake)) + tmean(softplus(rel_real))


def _check_mode_and_batch(real_logits: Tensor, fake_logits: Tensor, mode: str):
    if mode not in GAN_MODES:
        raise ValueError(f"gan mode must be one of {GAN_MODES}, got {mode!r}")
    if real_logits.data.size == 0 or fake_logits.data.size == 0:
        raise ValueError("empty logit batch")


def gradient_losses(sr: Tensor, hr: Tensor, d_gm: Discriminator,
                    mode: str = "ragan",
                    epsilon: float = GRAD_EPS) -> tuple[Tensor, Tensor, Tensor]:
    """Gradient-space supervision: (pix_gm, adv_gm, dis_gm).

    pix_gm is the L1 between gradient maps of output and target; the
    adversarial pair discriminates gradient-map patches. Gradients reach the
    generator through the (differentiable) gradient-map operator.
    """
    _check_same_shape(sr, hr, "gradient_losses")
    m_sr = gradient_map(sr, epsilon)
    m_hr = gradient_map(hr.detach(), epsilon)
    pix_gm = pixel_loss(m_sr, m_hr)
    real_logits = d_gm(m_hr)
    fake_detached = d_gm(gradient_map(sr.detach(), epsilon))
    dis_gm = gan_d_loss(real_logits, fake_detached, mode)
    fake_logits = d_gm(m_sr)
    adv_gm = gan_g_loss(real_logits, fake_logits, mode)
    return pix_gm, adv_gm, dis_gm


def gradient_branch_loss(sr_gradient: Tensor, hr: Tensor,
                         epsilon: float = GRAD_EPS) -> Tensor:
    """L1 between the branch's predicted gradient map and the target's map."""
    m_hr = gradient_map(hr.detach(), epsilon)
    _check_same_shape(sr_gradient, m_hr, "gradient_branch_loss")
    return pixel_loss(sr_gradient, m_hr)


def total_generator_loss(parts: dict, w: LossWeights) -> Tensor:
    """Weighted sum of the six generator terms; parts maps name -> scalar Tensor.

    Missing parts count as zero. Every present part must be finite.
    """
    zero = Tensor(np.zeros(()))
    get = lambda k: parts.get(k) if parts.get(k) is not None else zero
    for k, v in parts.items():
        if v is not None and not np.isfinite(v.data).all():
            raise FloatingPointError(f"non-finite loss part {k!r}: {v.data}")
    return (get("perceptual")
            + nn.mul(get("pix_img"), w.beta_img)
            + nn.mul(get("adv_img"), w.gamma_img)
            + nn.mul(get("pix_gm"), w.beta_gm)
            + nn.mul(get("adv_gm"), w.gamma_gm)
            + nn.mul(get("pix_gb"), w.beta_gb))
