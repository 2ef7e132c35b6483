"""Synthetic hazy/clear pairs from the atmospheric scattering model.

    I(x) = J(x) t(x) + A (1 - t(x)),    t(x) = exp(-beta d(x))

Clear images and depth maps are procedural stand-ins for photographs with
measured depth; the beta/A sampling ranges match the indoor and outdoor
training sets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

T_MIN = 0.05

CLEAR_KINDS = ("checker", "gradient", "blobs", "text")
DEPTH_KINDS = ("ramp", "radial", "smooth_noise")


class HazeParameterError(ValueError):
    pass


@dataclass(frozen=True)
class HazeRanges:
    preset: str
    beta_range: tuple
    airlight_range: tuple

    @classmethod
    def named(cls, preset: str) -> "HazeRanges":
        if preset == "indoor":
            return cls("indoor", (0.6, 1.8), (0.7, 1.0))
        if preset == "outdoor":
            return cls("outdoor", (0.04, 0.2), (0.8, 1.0))
        raise HazeParameterError(f"unknown haze preset {preset!r} (indoor|outdoor)")


@dataclass
class SceneSample:
    clear: np.ndarray  # (1,3,H,W)
    depth: np.ndarray  # (H,W)
    beta: float
    airlight: float
    hazy: np.ndarray

    @property
    def transmission(self) -> np.ndarray:
        return transmission(self.depth, self.beta)


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    """Bilinear upsampling of a coarse random lattice; values in [0, 1]."""
    coarse = rng.random((cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx + c10 * fy * (1 - fx) + c11 * fy * fx)


# 5x7 bitmaps for a handful of glyphs used by the "text" kind
_GLYPHS = {
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "Z": ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "S": ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "N": ["10001", "11001", "10101", "10011", "10001", "10001", "10001"],
}


def synth_clear(kind: str, h: int, w: int, seed: int) -> np.ndarray:
    """Procedural RGB image (1,3,H,W) in [0,1]."""
    if h < 8 or w < 8:
        raise HazeParameterError(f"clear images need H,W >= 8, got {h}x{w}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if kind == "checker":
        period = int(rng.integers(2, max(3, min(h, w) // 4) + 1))
        mask = ((yy // period + xx // period) % 2).astype(bool)
        lo = rng.uniform(0.0, 0.45, size=3)
        hi = rng.uniform(0.55, 1.0, size=3)
        img = np.where(mask[None], hi[:, None, None], lo[:, None, None])
    elif kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(angle) * xx / w + np.sin(angle) * yy / h)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        freq = rng.uniform(2, 6)
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx + yy) / (h + w))
        c0, c1 = rng.random(3), rng.random(3)
        img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
        img = 0.8 * img + 0.2 * wave[None]
    elif kind == "blobs":
        img = np.tile(rng.uniform(0.1, 0.4, size=3)[:, None, None], (1, h, w))
        for _ in range(int(rng.integers(3, 8))):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(0.08, 0.3) * min(h, w)
            weight = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
            img = img * (1 - weight[None]) + rng.random(3)[:, None, None] * weight[None]
        img = img + 0.1 * (_smooth_noise(rng, h, w, 6)[None] - 0.5)
    elif kind == "text":
        bg, fg = rng.uniform(0.6, 1.0, size=3), rng.uniform(0.0, 0.35, size=3)
        mask = np.zeros((h, w), dtype=bool)
        cell = max(1, min(h // 9, w // 7))
        letters = list(_GLYPHS)
        for oy in range(1, h - 7 * cell + 1, 8 * cell):
            for ox in range(1, w - 5 * cell + 1, 6 * cell):
                glyph = _GLYPHS[letters[int(rng.integers(len(letters)))]]
                bits = np.array([[ch == "1" for ch in row] for row in glyph])
                block = np.kron(bits, np.ones((cell, cell), dtype=bool))
                mask[oy : oy + 7 * cell, ox : ox + 5 * cell] |= block
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    else:
        raise HazeParameterError(f"unknown clear kind {kind!r}; choose from {CLEAR_KINDS}")
    return np.clip(img, 0.0, 1.0)[None]


def synth_depth(kind: str, h: int, w: int, seed: int, d_max: float = 1.0) -> np.ndarray:
    if d_max <= 0:
        raise HazeParameterError(f"d_max must be positive, got {d_max}")
    if kind == "ramp":
        row = np.linspace(0.0, d_max, w)
        return np.tile(row, (h, 1))
    if kind == "radial":
        cy, cx = (h - 1) // 2, (w - 1) // 2
        yy, xx = np.mgrid[0:h, 0:w]
        r = np.hypot(yy - cy, xx - cx)
        return d_max * r / r.max()
    if kind == "smooth_noise":
        rng = np.random.default_rng(seed)
        n = _smooth_noise(rng, h, w, 4)
        n = (n - n.min()) / max(np.ptp(n), 1e-12)
        return d_max * n
    raise HazeParameterError(f"unknown depth kind {kind!r}; choose from {DEPTH_KINDS}")


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    return np.exp(-beta * np.asarray(depth))


def _check_params(beta: float, airlight: float) -> None:
    if not beta > 0:
        raise HazeParameterError(f"beta must be > 0, got {beta}")
    if not 0.0 <= airlight <= 1.0:
        raise HazeParameterError(f"airlight must lie in [0, 1], got {airlight}")


def apply_haze(clear: np.ndarray, depth: np.ndarray, beta: float, airlight: float) -> np.ndarray:
    """Haze a (...,3,H,W) image with a shared (H,W) depth map."""
    _check_params(beta, airlight)
    if np.any(np.asarray(depth) < 0):
        raise HazeParameterError("depth must be non-negative")
    t = transmission(depth, beta)
    return clear * t + airlight * (1.0 - t)


def invert_haze(hazy: np.ndarray, t_map: np.ndarray, airlight: float, t_min: float = T_MIN):
    """Recover J = (I - A(1 - t)) / t with t clamped below at ``t_min``.

    Returns ``(clear_estimate, clamped)`` where ``clamped`` tells whether any
    transmission value was raised to the floor.
    """
    t_map = np.asarray(t_map, dtype=np.float64)
    clamped = bool(np.any(t_map < t_min))
    t = np.maximum(t_map, t_min)
    return (hazy - airlight * (1.0 - t)) / t, clamped


def make_sample(index: int, ranges: HazeRanges, h: int, w: int, seed: int) -> tuple[SceneSample, dict]:
    """Sample ``index`` of a dataset; depends only on (seed, index)."""
    rng = np.random.default_rng([seed, index])
    clear_kind = CLEAR_KINDS[int(rng.integers(len(CLEAR_KINDS)))]
    depth_kind = DEPTH_KINDS[int(rng.integers(len(DEPTH_KINDS)))]
    clear_seed = int(rng.integers(2**31))
    depth_seed = int(rng.integers(2**31))
    beta = float(rng.uniform(*ranges.beta_range))
    airlight = float(rng.uniform(*ranges.airlight_range))
    # outdoor scenes are far away: scale depth so the low beta range still hazes visibly.
    # Both presets then keep beta*d <= 2.7, i.e. t >= 0.067 > T_MIN.
    d_max = float(rng.uniform(0.5, 1.5)) * (1.0 if ranges.preset == "indoor" else 9.0)
    clear = synth_clear(clear_kind, h, w, clear_seed)
    depth = synth_depth(depth_kind, h, w, depth_seed, d_max)
    hazy = apply_haze(clear, depth, beta, airlight)
    meta = {
        "clear_kind": clear_kind,
        "clear_seed": clear_seed,
        "depth_kind": depth_kind,
        "depth_seed": depth_seed,
        "d_max": d_max,
        "beta": beta,
        "A": airlight,
        "seed": [seed, index],
    }
    return SceneSample(clear, depth, beta, airlight, hazy), meta


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(1,3,H,W) or (3,H,W) floats in [0,1] -> (H,W,3) uint8."""
    arr = np.asarray(img)
    if arr.ndim == 4:
        arr = arr[0]
    return np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8).transpose(1, 2, 0)


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """PNG -> (1,3,H,W) float64 in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)[None]


def generate_dataset(n: int, preset: str, h: int, w: int, seed: int, out_dir) -> dict:
    """Write ``n`` clear/hazy PNG pairs plus ``manifest.json``; return the manifest."""
    if n < 1:
        raise HazeParameterError(f"n must be >= 1, got {n}")
    ranges = HazeRanges.named(preset)
    out = Path(out_dir)
    (out / "clear").mkdir(parents=True, exist_ok=True)
    (out / "hazy").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        sample, meta = make_sample(i, ranges, h, w, seed)
        sid = f"{i:05d}"
        clear_rel = f"clear/{sid}.png"
        hazy_rel = f"hazy/{sid}.png"
        write_png(out / clear_rel, sample.clear)
        write_png(out / hazy_rel, sample.hazy)
        entries.append({"id": sid, **meta, "clear_path": clear_rel, "hazy_path": hazy_rel})
    manifest = {
        "preset": preset,
        "beta_range": list(ranges.beta_range),
        "airlight_range": list(ranges.airlight_range),
        "size": [h, w],
        "seed": seed,
        "n": n,
        "samples": entries,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def load_dataset(data_dir) -> tuple[dict, np.ndarray, np.ndarray]:
    """Read a generated directory -> (manifest, hazy (N,3,H,W), clear (N,3,H,W))."""
    root = Path(data_dir)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no manifest.json in {root}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    hazy = np.concatenate([read_png(root / s["hazy_path"]) for s in manifest["samples"]])
    clear = np.concatenate([read_png(root / s["clear_path"]) for s in manifest["samples"]])
    return manifest, hazy, clear
