"""Differentiable tensor substrate: autodiff, layers, checkpoint container."""

from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    concat_channels,
    conv2d,
    dense,
    flatten_batch,
    leaky_relu,
    matmul,
    mul,
    reshape,
    softplus,
    sub,
    tabs,
    tmean,
    tsum,
    upsample_nearest,
)
from .layers import Conv2d, Dense, Module, ModuleList, freeze, kaiming_normal
from .checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "DEFAULT_DTYPE", "Tensor", "add", "as_tensor", "backward", "concat",
    "concat_channels", "conv2d", "dense", "flatten_batch", "leaky_relu",
    "matmul", "mul", "reshape", "softplus", "sub", "tabs", "tmean", "tsum",
    "upsample_nearest", "Conv2d", "Dense", "Module", "ModuleList", "freeze",
    "kaiming_normal", "FORMAT_VERSION", "Checkpoint", "CheckpointError",
    "load_checkpoint", "save_checkpoint",
]
