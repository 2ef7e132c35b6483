"""Delimited tables and matplotlib figures written next to them."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "figure.figsize": (4.5, 3.0),
}


def write_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    if len(x) < window:
        return x
    kernel = np.ones(window) / window
    return np.convolve(x, kernel, mode="valid")


def plot_loss_curve(losses: Sequence[float], path, smooth: int = 100, title: str = "") -> Path:
    losses = np.asarray(losses, dtype=float)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        steps = np.arange(1, len(losses) + 1)
        ax.plot(steps, losses, color="0.75", lw=0.6, label="L1 per step")
        sm = _moving_average(losses, smooth)
        if len(sm) != len(losses):
            ax.plot(steps[smooth - 1 :], sm, color="C0", lw=1.2, label=f"{smooth}-step mean")
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("training L1")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_ablation(summary: Sequence[dict], path, metric: str = "psnr_db") -> Path:
    """Bar per variant: mean over seeds with min/max whiskers."""
    names = [s["variant"] for s in summary]
    means = np.array([s[f"{metric}_mean"] for s in summary])
    lo = means - np.array([s[f"{metric}_min"] for s in summary])
    hi = np.array([s[f"{metric}_max"] for s in summary]) - means
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(3.0, 0.9 * len(names) + 1.5), 3.0))
        ax.bar(range(len(names)), means, yerr=[lo, hi], color="C0", alpha=0.8, capsize=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylabel("held-out PSNR (dB)" if metric == "psnr_db" else metric)
        span = max(float(means.max() - means.min()), 0.5)
        ax.set_ylim(float((means - lo).min()) - span, float((means + hi).max()) + 0.5 * span)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
