"""Full-reference image quality: PSNR and Gaussian-window SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    n_images: int

    def to_dict(self) -> dict:
        psnr = "inf" if math.isinf(self.psnr_db) else self.psnr_db
        return {"psnr_db": psnr, "ssim": self.ssim, "n_images": self.n_images}


def _same_shape(x, y) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, data_range: float = 1.0) -> float:
    """10 log10(range^2 / MSE); ``inf`` for identical inputs."""
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    x, y = _same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable valid-mode correlation over the last two axes
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim_map(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    g = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(x, y, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 windows, per channel then averaged.

    Accepts (H,W), (C,H,W) or (N,C,H,W); every leading index is a channel
    image and the result is the mean over all of them.
    """
    x, y = _same_shape(x, y)
    if x.ndim < 2 or min(x.shape[-2:]) < WINDOW:
        raise ValueError(f"SSIM needs images of at least {WINDOW}x{WINDOW}, got {x.shape}")
    x = x.reshape(-1, *x.shape[-2:])
    y = y.reshape(-1, *y.shape[-2:])
    per_channel = [ssim_map(a, b, data_range).mean() for a, b in zip(x, y)]
    return float(np.mean(per_channel))


def evaluate(preds, targets, data_range: float = 1.0) -> MetricReport:
    """Average PSNR and SSIM over paired (N,3,H,W) stacks.

    An image pair that is pixel-identical contributes ``inf`` PSNR, so the
    mean is ``inf`` only if any pair matches exactly.
    """
    preds, targets = _same_shape(preds, targets)
    ps = [psnr(p, t, data_range) for p, t in zip(preds, targets)]
    ss = [ssim(p, t, data_range) for p, t in zip(preds, targets)]
    return MetricReport(float(np.mean(ps)), float(np.mean(ss)), len(ps))
