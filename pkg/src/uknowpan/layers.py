"""Parameter containers and the small layer set the networks are built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


class Module:
    """Minimal parameter container.

    Parameters are the :class:`Tensor` attributes of a module; submodules are
    :class:`Module` attributes or lists of modules. Attributes whose names
    start with an underscore are not traversed.
    """

    def named_children(self) -> Iterator[tuple]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Tensor):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix.rstrip("."), self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}{name}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} vs parameter {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    # same bound as the common default (negative slope sqrt(5)): 1/sqrt(fan_in)
    bound = 1.0 / math.sqrt(fan_in)
    return _param(rng.uniform(-bound, bound, size=shape))


def norm_groups(channels: int) -> int:
    return 4 if channels % 4 == 0 else 1


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = kaiming_uniform(rng, (out_features, in_features), in_features)
        self.bias = kaiming_uniform(rng, (out_features,), in_features)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1x1(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.weight = kaiming_uniform(rng, (cout, cin), cin)
        self.bias = kaiming_uniform(rng, (cout,), cin)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1x1(x, self.weight, self.bias)


class DWConv3x3(Module):
    def __init__(self, channels: int, rng: np.random.Generator, stride: int = 1):
        self.weight = kaiming_uniform(rng, (channels, 3, 3), 9)
        self.bias = kaiming_uniform(rng, (channels,), 9)
        self._stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return T.dwconv3x3(x, self.weight, self.bias, stride=self._stride)


class PDConv(Module):
    """1x1 convolution followed by a 3x3 depth-wise convolution."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.point = Conv1x1(cin, cout, rng)
        self.depth = DWConv3x3(cout, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.depth(self.point(x))


class GroupNorm(Module):
    def __init__(self, channels: int, affine: bool = True, eps: float = 1e-5):
        self._groups = norm_groups(channels)
        self._eps = eps
        if affine:
            self.weight = _param(np.ones(channels))
            self.bias = _param(np.zeros(channels))
        else:
            self.weight = self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self._groups, self.weight, self.bias, self._eps)


def timestep_embedding(t, dim: int, dtype=np.float64) -> Tensor:
    """Sinusoidal embedding of integer timesteps; returns (N, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    return Tensor(np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype))


class ResBlock(Module):
    """Pre-norm residual block; optionally adds a projected timestep embedding."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, temb_dim: int | None = None):
        self.norm1 = GroupNorm(cin)
        self.conv1 = PDConv(cin, cout, rng)
        self.temb = Linear(temb_dim, cout, rng) if temb_dim else None
        self.norm2 = GroupNorm(cout)
        self.conv2 = PDConv(cout, cout, rng)
        self.skip = Conv1x1(cin, cout, rng) if cin != cout else None

    def forward(self, x: Tensor, emb: Tensor | None = None) -> Tensor:
        h = self.conv1(T.gelu(self.norm1(x)))
        if self.temb is not None:
            if emb is None:
                raise DimensionError("ResBlock built with a timestep projection needs an embedding")
            proj = self.temb(emb)
            h = h + T.reshape(proj, proj.shape + (1, 1))
        h = self.conv2(T.gelu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)
