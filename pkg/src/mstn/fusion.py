"""Adaptive feature selection (AFSM) and multi-scale feature fusion (MFFM)."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .layers import ConvLayer, DeconvLayer, FullyConnectedLayer, Module, ResidualBlock, downsample_layer
from .tensor import ShapeError, Tensor


def compressed_width(channels: int) -> int:
    return max(channels // 4, 4)


class Afsm(Module):
    """Channel attention that picks, per channel, a convex mix of two inputs.

    u = x1 + x2, s = mean_hw(u), z = relu(fc(s)),
    (a, b) = softmax(gate_a @ z, gate_b @ z), out = a*x1 + b*x2.
    """

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        d = compressed_width(channels)
        self.fc = FullyConnectedLayer(channels, d, rng, dtype)
        # gate matrices are bias-free fully connected maps d -> C
        self.gate_a = GateLayer(d, channels, rng, dtype)
        self.gate_b = GateLayer(d, channels, rng, dtype)
        self.channels = channels

    def gates(self, x1: Tensor, x2: Tensor) -> tuple[Tensor, Tensor]:
        u = T.add(x1, x2)
        s = T.global_avg_pool(u)
        z = T.relu(self.fc(s))
        return T.softmax_pair(self.gate_a(z), self.gate_b(z))

    def __call__(self, x1: Tensor, x2: Tensor) -> Tensor:
        if x1.shape != x2.shape:
            raise ShapeError(f"AFSM inputs differ in shape: {x1.shape} vs {x2.shape}")
        a, b = self.gates(x1, x2)
        return T.add(T.mul(a, x1), T.mul(b, x2))


class GateLayer(Module):
    """Bias-free (C, d) matrix applied to the compressed descriptor."""

    def __init__(self, d: int, channels: int, rng: np.random.Generator, dtype=np.float32):
        bound = np.sqrt(6.0 / d)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(channels, d)).astype(dtype), requires_grad=True)
        self.fan_in = d

    def __call__(self, z: Tensor) -> Tensor:
        return T.fully_connected(z, self.weight)


def afsm_forward(afsm: Afsm, x1: Tensor, x2: Tensor) -> Tensor:
    return afsm(x1, x2)


class ElementwiseSum(Module):
    """Drop-in AFSM replacement for the w/o-AFSM ablation."""

    def __call__(self, x1: Tensor, x2: Tensor) -> Tensor:
        if x1.shape != x2.shape:
            raise ShapeError(f"fusion inputs differ in shape: {x1.shape} vs {x2.shape}")
        return T.add(x1, x2)


class Mffm(Module):
    """Fuse a fine map with the next-coarser one and return at fine resolution.

    fine -> stride-2 conv -> AFSM(with coarse) -> conv -> deconv -> RB, then
    the untouched fine map is added back.
    """

    def __init__(self, c_fine: int, c_coarse: int, use_afsm: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32, name: str = "mffm"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.down = downsample_layer(c_fine, c_coarse, rng, dtype)
        self.afsm = Afsm(c_coarse, rng, dtype) if use_afsm else ElementwiseSum()
        self.mid = ConvLayer(c_coarse, c_coarse, 3, 1, 1, rng, dtype)
        self.up = DeconvLayer(c_coarse, c_fine, 4, 2, 1, rng, dtype)
        self.rb = ResidualBlock(c_fine, c_fine, rng, dtype)
        self.c_fine = c_fine
        self.c_coarse = c_coarse
        self.name = name

    def __call__(self, fine: Tensor, coarse: Tensor) -> Tensor:
        n, c, h, w = fine.shape
        if c != self.c_fine or coarse.shape[1] != self.c_coarse:
            raise ShapeError(
                f"{self.name}: expected channels ({self.c_fine}, {self.c_coarse}), "
                f"got ({c}, {coarse.shape[1]})"
            )
        if h % 2 or w % 2 or coarse.shape[2:] != (h // 2, w // 2):
            raise ShapeError(
                f"{self.name}: coarse input {coarse.shape[2:]} is not half of fine input {(h, w)}"
            )
        selected = self.afsm(self.down(fine), coarse)
        h_up = self.up(self.mid(selected))
        return T.add(self.rb(h_up), fine)


def mffm_forward(mffm: Mffm, fine: Tensor, coarse: Tensor) -> Tensor:
    return mffm(fine, coarse)
