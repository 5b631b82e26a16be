"""Parameterized layers and the module tree that names their parameters.

Modules register child modules and parameter Tensors in attribute order, so
``param_tree()`` yields a deterministic ordered mapping from hierarchical
names (``sr_branch.blocks.3.conv2.weight``) to Tensors.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_tree(self) -> "OrderedDict[str, Tensor]":
        tree = OrderedDict(self.named_parameters())
        if len(tree) != len(list(self.named_parameters())):
            raise RuntimeError("duplicate parameter names in module tree")
        return tree

    def load_param_tree(self, arrays) -> None:
        """Copy values into parameters by name; shapes must match exactly."""
        tree = self.param_tree()
        missing = set(tree) - set(arrays)
        extra = set(arrays) - set(tree)
        if missing or extra:
            raise KeyError(f"parameter tree mismatch: missing={sorted(missing)[:4]} "
                           f"extra={sorted(extra)[:4]}")
        for name, param in tree.items():
            src = np.asarray(arrays[name])
            if src.shape != param.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{src.shape} vs {param.data.shape}")
            param.data = src.astype(param.data.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    """Sequence of child modules named by their index."""

    def __init__(self, modules=()):
        self._items: list[Module] = list(modules)

    def append(self, module: Module) -> None:
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, m in enumerate(self._items):
            sub = f"{prefix}.{i}" if prefix else str(i)
            yield from m.named_parameters(sub)


def kaiming_normal(rng: np.random.Generator, shape: tuple, fan_in: int,
                   slope: float = 0.2, scale: float = 1.0,
                   dtype=np.float64) -> np.ndarray:
    """Fan-in scaled normal init with leaky-ReLU gain correction."""
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    std = gain / np.sqrt(fan_in)
    return (rng.standard_normal(shape) * std * scale).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: Optional[int] = None,
                 pad_mode: str = "zero", init_scale: float = 1.0,
                 bias: bool = True, dtype=np.float64):
        k = kernel_size
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.pad_mode = pad_mode
        fan_in = in_channels * k * k
        self.weight = Tensor(
            kaiming_normal(rng, (out_channels, in_channels, k, k), fan_in,
                           scale=init_scale, dtype=dtype),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, pad_mode=self.pad_mode)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.weight = Tensor(
            kaiming_normal(rng, (out_features, in_features), in_features, dtype=dtype),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.dense(x, self.weight, self.bias)


def freeze(module: Module) -> Module:
    """Mark every parameter as non-trainable; gradients still flow to inputs."""
    for p in module.parameters():
        p.requires_grad = False
    return module
