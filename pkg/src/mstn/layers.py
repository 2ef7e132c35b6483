"""Parameterised building blocks: conv layers, residual blocks, fc compression."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import ConfigError, ShapeError, Tensor


class Module:
    """Minimal parameter container.

    Parameters are discovered by walking attributes in definition order, so
    registry names are stable (``mffm_1_0.afsm.fc.weight``) and each tensor
    appears exactly once.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def init_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> Tensor:
    bound = init_bound(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class ConvLayer(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.fan_in = cin * k * k

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DeconvLayer(Module):
    """Transposed convolution, k=4 s=2 p=1 by default (exact x2 upsampling)."""

    def __init__(self, cin: int, cout: int, k: int = 4, stride: int = 2, padding: int = 1,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _uniform(rng, (cin, cout, k, k), cin * k * k, dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.fan_in = cin * k * k

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class FullyConnectedLayer(Module):
    def __init__(self, cin: int, d: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        if d < 1:
            raise ConfigError(f"fully connected output width must be >= 1, got {d}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _uniform(rng, (d, cin), cin, dtype)
        self.bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.fan_in = cin

    def __call__(self, x: Tensor) -> Tensor:
        return T.fully_connected(x, self.weight, self.bias)


class ResidualBlock(Module):
    """conv3x3 -> relu -> conv3x3 plus an identity (or 1x1 projection) skip."""

    def __init__(self, cin: int, cout: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = ConvLayer(cin, cout, 3, 1, 1, rng, dtype)
        self.conv2 = ConvLayer(cout, cout, 3, 1, 1, rng, dtype)
        self.projection = ConvLayer(cin, cout, 1, 1, 0, rng, dtype) if cin != cout else None
        self.cin = cin
        self.cout = cout

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cin:
            raise ShapeError(f"residual block expects {self.cin} channels, got {x.shape[1]}")
        skip = x if self.projection is None else self.projection(x)
        return T.add(skip, self.conv2(T.relu(self.conv1(x))))


def downsample_layer(cin: int, cout: int, rng=None, dtype=np.float32) -> ConvLayer:
    return ConvLayer(cin, cout, 3, 2, 1, rng, dtype)


def downsample(x: Tensor, layer: ConvLayer) -> Tensor:
    """Learned stride-2 reduction; spatial dims must be even."""
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ConfigError(f"downsample needs even spatial dims, got {h}x{w}; pad the input first")
    return layer(x)


def upsample(x: Tensor, layer: DeconvLayer) -> Tensor:
    return layer(x)


def _leaf_layers(module: Module) -> Iterator[Module]:
    if hasattr(module, "fan_in"):
        yield module
    for value in vars(module).values():
        if isinstance(value, Module):
            yield from _leaf_layers(value)


def init_parameters(module: Module, seed: int) -> None:
    """Re-draw every weight from U(-sqrt(6/fan_in), +sqrt(6/fan_in)); zero biases."""
    rng = np.random.default_rng(seed)
    for layer in _leaf_layers(module):
        bound = init_bound(layer.fan_in)
        w = layer.weight
        w.data = rng.uniform(-bound, bound, size=w.shape).astype(w.dtype)
        bias = getattr(layer, "bias", None)
        if bias is not None:
            bias.data = np.zeros_like(bias.data)
