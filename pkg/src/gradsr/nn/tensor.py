"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient accumulator. Ops record
their parents and a backward closure on the output; ``backward`` on a scalar
walks the recorded graph in reverse topological order. Only the layer set the
super-resolution networks need is implemented (conv2d, dense, leaky-ReLU,
nearest upsample, channel concat, elementwise arithmetic, reductions,
softplus). Everything runs in float64 unless the inputs say otherwise.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class Tensor:
    """An ndarray with an optional grad buffer and graph bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable] = None

    # -- constructors -------------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"],
                 backward_fn: Callable) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    # -- basic protocol ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _const_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _const_like(b, a)
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _const_like(b, a)
    out_data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return Tensor._from_op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _const_like(b, a)
    out_data = a.data * b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * b_data, a_data.shape),
                _unbroadcast(g * a_data, b_data.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def tabs(x: Tensor) -> Tensor:
    """|x| elementwise; subgradient at 0 taken as 0."""
    sign = np.sign(x.data)

    def backward(g):
        return (g * sign,)

    return Tensor._from_op(np.abs(x.data), (x,), backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), computed stably; derivative is the logistic sigmoid."""
    out_data = np.logaddexp(0.0, x.data)
    x_data = x.data

    def backward(g):
        return (g * _sigmoid(x_data),)

    return Tensor._from_op(out_data, (x,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- reductions ---------------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    shape = x.data.shape

    def backward(g):
        return (np.broadcast_to(g, shape).astype(x.data.dtype, copy=True),)

    return Tensor._from_op(np.asarray(x.data.sum()), (x,), backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.data.shape

    def backward(g):
        return (np.broadcast_to(g / n, shape).astype(x.data.dtype, copy=True),)

    return Tensor._from_op(np.asarray(x.data.mean()), (x,), backward)


# -- shape ops ----------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old_shape = x.data.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return Tensor._from_op(x.data.reshape(shape), (x,), backward)


def flatten_batch(x: Tensor) -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    return reshape(x, (x.data.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out_data, tuple(tensors), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError(f"concat_channels: non-channel axes differ, "
                         f"{a.data.shape} vs {b.data.shape}")
    return concat((a, b), axis=1)


# -- activations / resampling -------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    dt = x.data.dtype
    factor = np.where(x.data > 0, dt.type(1.0), dt.type(slope))

    def backward(g):
        return (g * factor,)

    return Tensor._from_op(x.data * factor, (x,), backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError("upsample_nearest expects an NCHW tensor")
    n, c, h, w = x.data.shape
    out_data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._from_op(out_data, (x,), backward)


# -- dense / matmul -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a_data, b_data = a.data, b.data
    out_data = a_data @ b_data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return Tensor._from_op(out_data, (a, b), backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x (N, F) times weight (O, F) transposed, plus bias (O,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(f"dense: incompatible shapes {x.data.shape} x {weight.data.shape}")
    x_data, w_data = x.data, weight.data
    out_data = x_data @ w_data.T
    if bias is not None:
        out_data = out_data + bias.data

    def backward(g):
        grads = [g @ w_data, g.T @ x_data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out_data, parents, backward)


# -- 2-D convolution ----------------------------------------------------------

def _pad_nchw(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    if mode == "zero":
        return xp
    if mode != "replicate":
        raise ValueError(f"unknown padding mode {mode!r}")
    xp[:, :, :p, p:p + w] = x[:, :, :1, :]
    xp[:, :, p + h:, p:p + w] = x[:, :, -1:, :]
    xp[:, :, :, :p] = xp[:, :, :, p:p + 1]
    xp[:, :, :, p + w:] = xp[:, :, :, p + w - 1:p + w]
    return xp


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*kh*kw, Ho*Wo), built from plain slice copies."""
    n, c = xp.shape[:2]
    col = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for u in range(kh):
        for v in range(kw):
            col[:, :, u, v] = xp[:, :, u:u + stride * ho:stride,
                                 v:v + stride * wo:stride]
    return col.reshape(n, c * kh * kw, ho * wo)


def _col2im(dcol2: np.ndarray, xp_shape: tuple, kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add the (N, C*kh*kw, Ho*Wo) gradient back onto the padded input."""
    n, c = xp_shape[:2]
    dcol = dcol2.reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros(xp_shape, dtype=dcol2.dtype)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + stride * ho:stride,
                v:v + stride * wo:stride] += dcol[:, :, u, v]
    return dxp


def _unpad_grad(dxp: np.ndarray, p: int, mode: str) -> np.ndarray:
    """Fold the gradient of a padded array back onto the unpadded one."""
    if p == 0:
        return dxp
    hp, wp = dxp.shape[2], dxp.shape[3]
    dx = dxp[:, :, p:hp - p, p:wp - p]
    if mode == "zero":
        return np.ascontiguousarray(dx)
    dx = dx.copy()
    # replicate padding: border gradients accumulate onto the edge pixels
    dx[:, :, 0, :] += dxp[:, :, :p, p:wp - p].sum(axis=2)
    dx[:, :, -1, :] += dxp[:, :, hp - p:, p:wp - p].sum(axis=2)
    dx[:, :, :, 0] += dxp[:, :, p:hp - p, :p].sum(axis=3)
    dx[:, :, :, -1] += dxp[:, :, p:hp - p, wp - p:].sum(axis=3)
    dx[:, :, 0, 0] += dxp[:, :, :p, :p].sum(axis=(2, 3))
    dx[:, :, 0, -1] += dxp[:, :, :p, wp - p:].sum(axis=(2, 3))
    dx[:, :, -1, 0] += dxp[:, :, hp - p:, :p].sum(axis=(2, 3))
    dx[:, :, -1, -1] += dxp[:, :, hp - p:, wp - p:].sum(axis=(2, 3))
    return dx


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, pad_mode: str = "zero") -> Tensor:
    """Cross-correlation of an NCHW input with an (Cout, Cin, kh, kw) kernel."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIHW weight")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    n, c, h, w = x.data.shape
    cout, cin, kh, kw = weight.data.shape
    if c != cin:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {cin}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{w}")

    col2 = _im2col(_pad_nchw(x.data, padding, pad_mode), kh, kw, stride, ho, wo)
    w_mat = weight.data.reshape(cout, cin * kh * kw)
    out = np.empty((n, cout, ho * wo), dtype=col2.dtype)
    for ni in range(n):
        np.matmul(w_mat, col2[ni], out=out[ni])
    if bias is not None:
        out += bias.data[:, None]
    out_data = out.reshape(n, cout, ho, wo)
    xp_shape = (n, c, h + 2 * padding, w + 2 * padding)
    need_dx = x.requires_grad
    need_dw = weight.requires_grad

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(n, cout, ho * wo))
        col_b = _im2col(_pad_nchw(x.data, padding, pad_mode), kh, kw, stride, ho, wo)
        d_weight = d_input = None
        if need_dw:
            dw = g2[0] @ col_b[0].T
            for ni in range(1, n):
                dw += g2[ni] @ col_b[ni].T
            d_weight = dw.reshape(cout, cin, kh, kw)
        if need_dx:
            dcol2 = np.empty_like(col_b)
            for ni in range(n):
                np.matmul(w_mat.T, g2[ni], out=dcol2[ni])
            dxp = _col2im(dcol2, xp_shape, kh, kw, stride, ho, wo)
            d_input = _unpad_grad(dxp, padding, pad_mode)
        if bias is not None:
            return d_input, d_weight, g2.sum(axis=(0, 2))
        return d_input, d_weight

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out_data, parents, backward)


# -- backward engine ----------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dt into ``t.grad`` for every requires_grad tensor.

    Repeated calls keep accumulating until grads are cleared.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad += g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = pending.get(id(parent))
            # closures may hand back aliased arrays; accumulate out of place
            pending[id(parent)] = pg if acc is None else acc + pg
