"""Two-branch x4 super-resolution generator.

The SR branch is a residual-in-residual dense network. The gradient branch
super-resolves the gradient map of the LR input; it taps intermediate SR
features on the way, and its penultimate HR features are fused back into the
SR branch (concat -> one extra RRDB -> conv) before reconstruction. A 1x1
conv on those same features emits the predicted HR gradient map, which gets
its own supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .gradops import gradient_map
from .nn import Conv2d, Module, ModuleList, Tensor, concat_channels, leaky_relu, upsample_nearest

SCALE = 4
MIN_LR_SIZE = 8


@dataclass
class GeneratorConfig:
    num_rrdb: int = 8
    base_channels: int = 32
    growth_channels: int = 16
    tap_indices: tuple = (2, 4, 6, 8)
    scale: int = SCALE
    img_channels: int = 3
    use_gradient_branch: bool = True
    fuse_gradient_features: bool = True

    def __post_init__(self):
        self.tap_indices = tuple(int(t) for t in self.tap_indices)
        if self.scale != SCALE:
            raise ValueError(f"only x{SCALE} upscaling is supported")
        if self.num_rrdb < 1 or self.base_channels < 1 or self.growth_channels < 1:
            raise ValueError("num_rrdb, base_channels, growth_channels must be >= 1")
        if self.img_channels not in (1, 3):
            raise ValueError("img_channels must be 1 or 3")
        if self.use_gradient_branch:
            taps = self.tap_indices
            if not taps:
                raise ValueError("gradient branch requires at least one tap")
            if any(t < 1 or t > self.num_rrdb for t in taps):
                raise ValueError(f"tap indices {taps} out of range 1..{self.num_rrdb}")
            if any(b <= a for a, b in zip(taps, taps[1:])):
                raise ValueError(f"tap indices {taps} must be strictly increasing")

    def to_dict(self) -> dict:
        return {"num_rrdb": self.num_rrdb, "base_channels": self.base_channels,
                "growth_channels": self.growth_channels,
                "tap_indices": list(self.tap_indices), "scale": self.scale,
                "img_channels": self.img_channels,
                "use_gradient_branch": self.use_gradient_branch,
                "fuse_gradient_features": self.fuse_gradient_features}

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(**{**d, "tap_indices": tuple(d["tap_indices"])})


@dataclass
class GeneratorOutput:
    sr_image: Tensor
    sr_gradient: Optional[Tensor]


class DenseBlock(Module):
    """Five 3x3 convs with dense connectivity, residual scaled by 0.2."""

    def __init__(self, nf: int, gc: int, rng, dtype=np.float64):
        self.conv1 = Conv2d(nf, gc, 3, rng, init_scale=0.1, dtype=dtype)
        self.conv2 = Conv2d(nf + gc, gc, 3, rng, init_scale=0.1, dtype=dtype)
        self.conv3 = Conv2d(nf + 2 * gc, gc, 3, rng, init_scale=0.1, dtype=dtype)
        self.conv4 = Conv2d(nf + 3 * gc, gc, 3, rng, init_scale=0.1, dtype=dtype)
        self.conv5 = Conv2d(nf + 4 * gc, nf, 3, rng, init_scale=0.1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x1 = leaky_relu(self.conv1(x))
        x2 = leaky_relu(self.conv2(nn.concat((x, x1))))
        x3 = leaky_relu(self.conv3(nn.concat((x, x1, x2))))
        x4 = leaky_relu(self.conv4(nn.concat((x, x1, x2, x3))))
        x5 = self.conv5(nn.concat((x, x1, x2, x3, x4)))
        return x + x5 * 0.2


class RRDB(Module):
    """Residual-in-residual dense block: three dense blocks, outer 0.2 skip."""

    def __init__(self, nf: int, gc: int, rng, dtype=np.float64):
        self.dense1 = DenseBlock(nf, gc, rng, dtype)
        self.dense2 = DenseBlock(nf, gc, rng, dtype)
        self.dense3 = DenseBlock(nf, gc, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        out = self.dense3(self.dense2(self.dense1(x)))
        return x + out * 0.2


class _GradBlock(Module):
    """Per-tap unit: fold the concatenated tap back to width, then one RRDB."""

    def __init__(self, nf: int, gc: int, rng, dtype):
        self.reduce = Conv2d(2 * nf, nf, 1, rng, dtype=dtype)
        self.rrdb = RRDB(nf, gc, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.rrdb(leaky_relu(self.reduce(x)))


class _SRBranch(Module):
    def __init__(self, cfg: GeneratorConfig, rng, dtype):
        nf, gc, c = cfg.base_channels, cfg.growth_channels, cfg.img_channels
        self.conv_first = Conv2d(c, nf, 3, rng, dtype=dtype)
        self.blocks = ModuleList([RRDB(nf, gc, rng, dtype) for _ in range(cfg.num_rrdb)])
        self.trunk_conv = Conv2d(nf, nf, 3, rng, dtype=dtype)
        self.upconv1 = Conv2d(nf, nf, 3, rng, dtype=dtype)
        self.upconv2 = Conv2d(nf, nf, 3, rng, dtype=dtype)
        if cfg.use_gradient_branch:
            self.fusion_rrdb = RRDB(2 * nf, gc, rng, dtype)
            self.fusion_conv = Conv2d(2 * nf, nf, 3, rng, dtype=dtype)
        self.conv_hr = Conv2d(nf, nf, 3, rng, dtype=dtype)
        # damped head: untrained outputs start near zero instead of far outside
        # the image range, which costs hundreds of warm-up steps to undo
        self.conv_last = Conv2d(nf, c, 3, rng, init_scale=0.1, dtype=dtype)


class _GradBranch(Module):
    def __init__(self, cfg: GeneratorConfig, rng, dtype):
        nf, gc, c = cfg.base_channels, cfg.growth_channels, cfg.img_channels
        self.stem = Conv2d(c, nf, 3, rng, dtype=dtype)
        self.blocks = ModuleList([_GradBlock(nf, gc, rng, dtype)
                                  for _ in cfg.tap_indices])
        self.upconv1 = Conv2d(nf, nf, 3, rng, dtype=dtype)
        self.upconv2 = Conv2d(nf, nf, 3, rng, dtype=dtype)
        self.conv_hr = Conv2d(nf, nf, 3, rng, dtype=dtype)
        self.conv_out = Conv2d(nf, c, 1, rng, init_scale=0.1, dtype=dtype)


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, rng, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        self.sr_branch = _SRBranch(cfg, rng, dtype)
        if cfg.use_gradient_branch:
            self.grad_branch = _GradBranch(cfg, rng, dtype)

    def forward(self, lr: Tensor,
                fuse_gradient_features: Optional[bool] = None) -> GeneratorOutput:
        cfg = self.cfg
        if lr.data.ndim != 4 or lr.data.shape[1] != cfg.img_channels:
            raise ValueError(f"expected N x {cfg.img_channels} x H x W input, "
                             f"got {lr.data.shape}")
        if lr.data.shape[2] < MIN_LR_SIZE or lr.data.shape[3] < MIN_LR_SIZE:
            raise ValueError(f"LR input must be at least {MIN_LR_SIZE} px per side")
        if fuse_gradient_features is None:
            fuse_gradient_features = cfg.fuse_gradient_features

        sr = self.sr_branch
        fea = sr.conv_first(lr)
        first = fea
        tap_set = set(cfg.tap_indices) if cfg.use_gradient_branch else set()
        taps = []
        for i, block in enumerate(sr.blocks, start=1):
            fea = block(fea)
            if i in tap_set:
                taps.append(fea)
        base = first + sr.trunk_conv(fea)
        u = leaky_relu(sr.upconv1(upsample_nearest(base, 2)))
        u = leaky_relu(sr.upconv2(upsample_nearest(u, 2)))

        sr_gradient = None
        if cfg.use_gradient_branch:
            gb = self.grad_branch
            g = gb.stem(gradient_map(lr))
            for tap, gblock in zip(taps, gb.blocks):
                g = gblock(concat_channels(g, tap))
            g = leaky_relu(gb.upconv1(upsample_nearest(g, 2)))
            g = leaky_relu(gb.upconv2(upsample_nearest(g, 2)))
            g_feat = leaky_relu(gb.conv_hr(g))
            sr_gradient = gb.conv_out(g_feat)
            if fuse_gradient_features:
                fused_in = concat_channels(u, g_feat)
            else:
                fused_in = concat_channels(u, Tensor(np.zeros_like(g_feat.data)))
            u = sr.fusion_conv(sr.fusion_rrdb(fused_in))

        sr_image = sr.conv_last(leaky_relu(sr.conv_hr(u)))
        return GeneratorOutput(sr_image=sr_image, sr_gradient=sr_gradient)


def build_generator(cfg: GeneratorConfig, rng_seed: int,
                    dtype=np.float64) -> Generator:
    """Deterministic construction: same config and seed give identical weights."""
    return Generator(cfg, np.random.default_rng(rng_seed), dtype=dtype)
