"""L1 training with Adam and a cosine-annealed learning rate."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .grid import Mstn
from .tensor import ConfigError, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-4
    lr_min: float = 0.0
    total_iters: int = 5000
    batch: int = 8
    patch: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    augment: bool = True
    log_every: int = 100

    def __post_init__(self):
        if self.lr_min > self.lr_max:
            raise ConfigError(f"lr_min {self.lr_min} exceeds lr_max {self.lr_max}")
        if self.total_iters < 1 or self.batch < 1 or self.patch < 1:
            raise ConfigError("total_iters, batch and patch must be positive")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        base = dict(lr_max=1e-4, lr_min=0.0, total_iters=50_000_000, batch=16, patch=240)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


class NumericalError(RuntimeError):
    pass


def cosine_lr(t: int, config: TrainConfig) -> float:
    if not 0 <= t <= config.total_iters:
        raise ValueError(f"iteration {t} outside [0, {config.total_iters}]")
    # convex weights keep t=0, T/2 and T exact in floating point
    w = 0.5 * (1.0 + math.cos(math.pi * t / config.total_iters))
    return w * config.lr_max + (1.0 - w) * config.lr_min


class Adam:
    def __init__(self, params: list, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def augment(hazy: np.ndarray, clear: np.ndarray, rng: np.random.Generator):
    """Apply one random rotation (0/90/180/270) and flip (none/h/v) to both images.

    Arrays are (C,H,W); the same transform is applied to the pair.
    """
    if hazy.shape != clear.shape:
        raise ValueError(f"pair shapes differ: {hazy.shape} vs {clear.shape}")
    k = int(rng.integers(4))
    flip = int(rng.integers(3))
    return transform(hazy, k, flip), transform(clear, k, flip)


def transform(img: np.ndarray, k: int, flip: int) -> np.ndarray:
    if k % 2 and img.shape[-1] != img.shape[-2]:
        raise ValueError(f"rotation needs square patches, got {img.shape[-2]}x{img.shape[-1]}")
    out = np.rot90(img, k, axes=(-2, -1))
    if flip == 1:
        out = out[..., ::-1]
    elif flip == 2:
        out = out[..., ::-1, :]
    return np.ascontiguousarray(out)


def sample_batch(hazy: np.ndarray, clear: np.ndarray, cfg: TrainConfig, rng: np.random.Generator, dtype):
    n, _, h, w = hazy.shape
    p = cfg.patch
    if p > h or p > w:
        raise ConfigError(f"patch {p} larger than training images {h}x{w}")
    idx = rng.integers(n, size=cfg.batch) if n != cfg.batch else np.arange(n)
    xs, ys = [], []
    for i in idx:
        oy = int(rng.integers(h - p + 1))
        ox = int(rng.integers(w - p + 1))
        a = hazy[i, :, oy : oy + p, ox : ox + p]
        b = clear[i, :, oy : oy + p, ox : ox + p]
        if cfg.augment:
            a, b = augment(a, b, rng)
        xs.append(a)
        ys.append(b)
    return np.stack(xs).astype(dtype), np.stack(ys).astype(dtype)


def grad_norm(params) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None)))


def train_step(model: Mstn, hazy: np.ndarray, clear: np.ndarray, adam: Adam, lr: float) -> float:
    """forward -> L1 -> backward -> Adam -> zero grads; returns the pre-update loss."""
    loss = T.l1_loss(model(Tensor(hazy)), Tensor(clear))
    value = float(loss.data)
    T.backward(loss)
    if not math.isfinite(value):
        gn = grad_norm(adam.params)
        adam.zero_grad()
        raise NumericalError(f"non-finite loss {value} at step {adam.t + 1} (lr={lr:g}, grad-norm={gn:g})")
    adam.step(lr)
    adam.zero_grad()
    return value


class Trainer:
    """Owns a model, its optimizer, and the sampling RNG for one training run."""

    def __init__(self, model: Mstn, cfg: TrainConfig, adam: Optional[Adam] = None,
                 iteration: int = 0, rng_state: Optional[dict] = None):
        self.model = model
        self.cfg = cfg
        if cfg.patch % model.config.multiple:
            raise ConfigError(f"patch {cfg.patch} not divisible by {model.config.multiple}")
        self.adam = adam or Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.eps_adam)
        self.iteration = iteration
        self.rng = np.random.default_rng(cfg.seed)
        if rng_state is not None:
            self.rng.bit_generator.state = rng_state
        self.losses: list = []

    def run(self, hazy: np.ndarray, clear: np.ndarray, until: Optional[int] = None,
            on_log: Optional[Callable[[dict], None]] = None) -> list:
        stop = self.cfg.total_iters if until is None else min(until, self.cfg.total_iters)
        t0 = time.perf_counter()
        while self.iteration < stop:
            lr = cosine_lr(self.iteration, self.cfg)
            x, y = sample_batch(hazy, clear, self.cfg, self.rng, self.model.dtype)
            loss = train_step(self.model, x, y, self.adam, lr)
            self.losses.append(loss)
            self.iteration += 1
            if on_log is not None and (self.iteration % self.cfg.log_every == 0 or self.iteration == stop):
                on_log({
                    "iter": self.iteration,
                    "lr": lr,
                    "loss": loss,
                    "wall_ms": round(1000 * (time.perf_counter() - t0), 1),
                })
        return self.losses

    def state(self) -> dict:
        return {"iteration": self.iteration, "rng_state": self.rng.bit_generator.state}


def predict(model: Mstn, hazy: np.ndarray, batch: int = 4) -> np.ndarray:
    outs = []
    for i in range(0, len(hazy), batch):
        outs.append(model(Tensor(hazy[i : i + batch].astype(model.dtype))).data)
    return np.concatenate(outs)
