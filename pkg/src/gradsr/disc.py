"""VGG-style patch discriminators for image space and gradient-map space.

Both discriminators share this architecture but never share parameters; the
training checkpoint stores them under distinct ``disc_img.`` / ``disc_grad.``
prefixes. Outputs are raw logits -- the losses apply the sigmoid, which the
relativistic formulation requires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (Conv2d, Dense, Module, ModuleList, Tensor, flatten_batch,
                 leaky_relu, reshape)


@dataclass
class DiscConfig:
    in_channels: int = 3
    base_channels: int = 16
    num_downsamples: int = 3
    input_size: int = 64

    def __post_init__(self):
        if self.input_size % (2 ** self.num_downsamples) != 0:
            raise ValueError(f"input_size {self.input_size} not divisible by "
                             f"2^{self.num_downsamples}")

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "base_channels": self.base_channels,
                "num_downsamples": self.num_downsamples, "input_size": self.input_size}

    @staticmethod
    def from_dict(d: dict) -> "DiscConfig":
        return DiscConfig(**d)


class Discriminator(Module):
    """Strided conv stack (leaky-ReLU 0.2, no normalization) plus dense head."""

    def __init__(self, cfg: DiscConfig, rng, dtype=np.float64):
        self.cfg = cfg
        bc = cfg.base_channels
        self.stem = Conv2d(cfg.in_channels, bc, 3, rng, dtype=dtype)
        downs = []
        ch = bc
        for _ in range(cfg.num_downsamples):
            downs.append(Conv2d(ch, ch * 2, 3, rng, stride=2, dtype=dtype))
            ch *= 2
        self.downs = ModuleList(downs)
        spatial = cfg.input_size // (2 ** cfg.num_downsamples)
        self.head1 = Dense(ch * spatial * spatial, 64, rng, dtype=dtype)
        self.head2 = Dense(64, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels:
            raise ValueError(f"expected N x {cfg.in_channels} x {cfg.input_size} x "
                             f"{cfg.input_size} input, got {x.data.shape}")
        if x.data.shape[2] != cfg.input_size or x.data.shape[3] != cfg.input_size:
            raise ValueError(f"discriminator built for {cfg.input_size} px inputs, "
                             f"got {x.data.shape[2]}x{x.data.shape[3]}")
        h = leaky_relu(self.stem(x))
        for conv in self.downs:
            h = leaky_relu(conv(h))
        h = leaky_relu(self.head1(flatten_batch(h)))
        logits = self.head2(h)
        return reshape(logits, (x.data.shape[0],))  # one logit per batch item


def build_discriminator(cfg: DiscConfig, rng_seed: int,
                        dtype=np.float64) -> Discriminator:
    return Discriminator(cfg, np.random.default_rng(rng_seed), dtype=dtype)
