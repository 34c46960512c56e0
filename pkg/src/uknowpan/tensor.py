"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a closure computing the vector-Jacobian product for each
parent; :meth:`Tensor.backward` walks the recorded graph in reverse
topological order. Ops are deliberately coarse (group norm, depth-wise
convolution and softmax are single nodes) to keep the graph small.

Arrays are laid out ``N x C x H x W`` wherever spatial ops are involved.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError, DomainError, ContractError, NumericError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _lift(a, b):
    """Promote a python/numpy scalar operand to the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Create the output node of a differentiable op.

    ``backward_fn(grad)`` must return one gradient array (or None) per parent.
    The closure is only attached when some parent requires a gradient and
    grad mode is on.
    """
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` following numpy broadcasting rules."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError(f"div: divisor of shape {b.shape} contains exact zeros")
    out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    if p < 1 and np.any(a.data == 0):
        raise DomainError(f"power {p}: base contains exact zeros")

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return make_op(a.data**p, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = _lift(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def bw(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data @ b.data, (a, b), bw)


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` against a constant; gradient 0 where clamped."""
    mask = a.data > floor
    return make_op(np.where(mask, a.data, floor).astype(a.dtype), (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return make_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# -- elementwise unary -----------------------------------------------------
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"log: argument of shape {a.shape} has non-positive entries")
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"sqrt: argument of shape {a.shape} has non-positive entries")
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a: Tensor) -> Tensor:
    return make_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_K = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU in its tanh form, ``0.5 x (1 + tanh(c (x + k x^3)))``.

    The gradient is the exact derivative of this expression.
    """
    x = a.data
    th = np.tanh(x * (_GELU_C + (_GELU_C * _GELU_K) * (x * x)))
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        g = np.ascontiguousarray(g, dtype=x.dtype)
        return (_kernels.gelu_tanh_grad(np.ascontiguousarray(x), th, g, x.dtype.type(_GELU_C), x.dtype.type(_GELU_K)),)

    return make_op(out, (a,), bw)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)

    def bw(g):
        return (g * (0.5 * (1.0 + np.tanh(0.5 * x))),)

    return make_op(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


# -- reductions ------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return make_op(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return make_op(np.asarray(out), (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), bw)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``a / sqrt(sum(a^2) + eps)`` along ``axis``."""
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True) + eps)
    out = a.data / norm

    def bw(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return make_op(out, (a,), bw)


# -- shape manipulation ----------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return make_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return make_op(out, (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return make_op(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if _needs_add_at(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_op(np.array(out, copy=True), (a,), bw)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_op(out, tensors, bw)


def split(a: Tensor, sections: int | Sequence[int], axis: int = 0) -> list:
    """Split into equal parts (int) or at the given sizes (sequence)."""
    n = a.shape[axis]
    if isinstance(sections, int):
        if n % sections:
            raise DimensionError(f"split: axis {axis} of {a.shape} not divisible by {sections}")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n:
            raise DimensionError(f"split: sizes {sizes} do not sum to axis {axis} of {a.shape}")
    parts, start = [], 0
    for s in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + s)
        parts.append(getitem(a, tuple(idx)))
        start += s
    return parts


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    return make_op(out, tensors, lambda g: tuple(np.moveaxis(g, axis, 0)))


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    return make_op(np.roll(a.data, shift, axis), (a,), lambda g: (np.roll(g, -shift, axis),))


def flip(a: Tensor, axis) -> Tensor:
    return make_op(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


# -- neural-network primitives ---------------------------------------------
def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape (..., in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_op(out, parents, bw)


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Point-wise convolution. ``x``: N x Cin x H x W, ``weight``: Cout x Cin."""
    if x.ndim != 4 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv1x1: input {x.shape} vs weight {weight.shape}")
    n, c, h, w = x.shape
    x3 = x.data.reshape(n, c, h * w)
    out = np.matmul(weight.data, x3)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, weight.shape[0], h, w)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g3 = g.reshape(n, weight.shape[0], h * w)
        gx = np.matmul(weight.data.T, g3).reshape(x.shape) if x.requires_grad else None
        gw = np.tensordot(g3, x3, axes=([0, 2], [0, 2])) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return make_op(out, parents, bw)


def dwconv3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Depth-wise 3x3 convolution, zero padding 1 (``same`` size at stride 1).

    ``weight`` has shape C x 3 x 3. With ``stride=2`` the output is
    ceil(H/2) x ceil(W/2).
    """
    if x.ndim != 4 or weight.shape != (x.shape[1], 3, 3):
        raise DimensionError(f"dwconv3x3: input {x.shape} vs weight {weight.shape}")
    n, c, h, w = x.shape
    s = stride
    ho, wo = (h - 1) // s + 1, (w - 1) // s + 1
    dtype = np.result_type(x.dtype, weight.dtype)
    xp = np.zeros((n, c, h + 2, w + 2), dtype=dtype)
    xp[:, :, 1:-1, 1:-1] = x.data
    wd = weight.data.astype(dtype, copy=False)
    bd = bias.data.astype(dtype, copy=False) if bias is not None else np.zeros(c, dtype=dtype)
    out = _kernels.dw3x3_forward(xp, wd, bd, s, ho, wo)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g = np.ascontiguousarray(g, dtype=dtype)
        gx = gw = None
        if x.requires_grad:
            if s == 1:
                # stride-1 adjoint is the correlation with the flipped kernel
                gp = np.zeros((n, c, h + 2, w + 2), dtype=dtype)
                gp[:, :, 1:-1, 1:-1] = g
                gx = _kernels.dw3x3_forward(gp, np.ascontiguousarray(wd[:, ::-1, ::-1]), np.zeros(c, dtype), 1, h, w)
            else:
                gx = _kernels.dw3x3_grad_input_strided(g, wd, s, h + 2, w + 2)[:, :, 1:-1, 1:-1]
        if weight.requires_grad:
            gw = _kernels.dw3x3_grad_weight(g, xp, s).astype(weight.dtype)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_op(out, parents, bw)


def group_norm(x: Tensor, groups: int, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Group normalization over (C/groups, H, W) blocks with optional affine."""
    n, c = x.shape[:2]
    if c % groups:
        raise DimensionError(f"group_norm: {c} channels not divisible into {groups} groups")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    out = xhat
    if weight is not None:
        out = out * weight.data.reshape(bshape)
    if bias is not None:
        out = out + bias.data.reshape(bshape)
    parents = [x] + [p for p in (weight, bias) if p is not None]

    def bw(g):
        grads = []
        if x.requires_grad:
            gh = g * weight.data.reshape(bshape) if weight is not None else g
            gh = gh.reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            gx = inv * (gh - gh.mean(axis=2, keepdims=True) - xh * (gh * xh).mean(axis=2, keepdims=True))
            grads.append(gx.reshape(x.shape))
        else:
            grads.append(None)
        red = (0,) + tuple(range(2, x.ndim))
        if weight is not None:
            grads.append((g * xhat).sum(axis=red))
        if bias is not None:
            grads.append(g.sum(axis=red))
        return tuple(grads)

    return make_op(out, parents, bw)


def avg_pool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2: spatial size {h}x{w} must be even")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_op(out, (x,), bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_op(out, (x,), bw)


@dataclass
class ComplexTensor:
    """A complex array held as two real tensors sharing one shape."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise DimensionError(f"ComplexTensor: real {self.real.shape} vs imag {self.imag.shape}")

    @property
    def shape(self) -> tuple:
        return self.real.shape

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


# -- autodiff driver -------------------------------------------------------
def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(x) into ``x.grad`` for every requires_grad ancestor."""
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    order = _topo_order(loss)
    pending = {id(loss): seed}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        # grads may alias between nodes; they are never mutated in place
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-6) -> float:
    """Compare reverse-mode gradients of scalar ``f`` at ``x`` with central differences.

    Returns ``max |analytic - numeric| / (|numeric| + 1e-12)`` over the
    elements of ``x``. ``x`` is not modified.
    """
    base = np.array(x.data, dtype=np.float64, order="C", copy=True)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("finite_difference_check: non-finite function value")
    out.backward()
    analytic = np.zeros_like(base) if probe.grad is None else probe.grad
    if not np.all(np.isfinite(analytic)):
        raise NumericError("finite_difference_check: non-finite analytic gradient")
    numeric = np.empty(base.shape)
    flat = numeric.reshape(-1)  # a view: numeric is C-ordered
    with no_grad():
        for k in range(base.size):
            shifted = base.copy().reshape(-1)
            shifted[k] += step
            fp = f(Tensor(shifted.reshape(base.shape))).data
            shifted[k] -= 2 * step
            fm = f(Tensor(shifted.reshape(base.shape))).data
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise NumericError(f"finite_difference_check: non-finite value at element {k}")
            flat[k] = (float(fp.reshape(-1)[0]) - float(fm.reshape(-1)[0])) / (2 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)))


@contextmanager
def frozen(params: Iterable[Tensor]):
    """Temporarily mark parameters as not requiring gradients."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


__all__ = [
    "Tensor", "as_tensor", "make_op", "no_grad", "is_grad_enabled", "backward",
    "finite_difference_check", "unbroadcast", "add", "sub", "mul", "div", "neg", "power",
    "matmul", "maximum", "clamp", "exp", "log", "sqrt", "tabs", "gelu", "softplus", "sigmoid",
    "tsum", "mean", "softmax", "l2_normalize", "reshape", "transpose", "swapaxes", "getitem",
    "concat", "split", "stack", "flip", "roll", "ComplexTensor", "linear", "conv1x1", "dwconv3x3", "group_norm",
    "avg_pool2", "upsample_nearest2", "frozen",
]
