"""Inference, evaluation and ablation runs shared by the CLI and the tests."""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import Mstn, MstnConfig, build
from .metrics import MetricReport, evaluate
from .tensor import ConfigError, Tensor
from .train import TrainConfig, Trainer


def pad_to_multiple(img: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple]:
    """Symmetric-pad (N,C,H,W) on the bottom/right so H and W divide ``multiple``."""
    h, w = img.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="symmetric")
    return img, (h, w)


def dehaze(model: Mstn, hazy: np.ndarray, batch: int = 4) -> np.ndarray:
    """Run the network on (N,3,H,W) images of any size; output clamped to [0,1]."""
    padded, (h, w) = pad_to_multiple(hazy, model.config.multiple)
    outs = []
    for i in range(0, len(padded), batch):
        chunk = Tensor(padded[i : i + batch].astype(model.dtype))
        outs.append(model(chunk).data[..., :h, :w])
    return np.clip(np.concatenate(outs).astype(np.float64), 0.0, 1.0)


def evaluate_model(model: Mstn, hazy: np.ndarray, clear: np.ndarray) -> MetricReport:
    return evaluate(dehaze(model, hazy), clear)


def variant_config(base: MstnConfig, variant: str) -> MstnConfig:
    """Map an ablation name onto a model config.

    ``baseline`` | ``no_afsm`` | ``no_mffm`` | ``scales:K`` | ``path:NAME``
    """
    if variant == "baseline":
        return base
    if variant == "no_afsm":
        return dataclasses.replace(base, use_afsm=False)
    if variant == "no_mffm":
        return dataclasses.replace(base, use_mffm=False)
    kind, _, arg = variant.partition(":")
    if kind == "scales" and arg.isdigit() and int(arg) >= 1:
        k = int(arg)
        return dataclasses.replace(base, rows=k, scales=k)
    if kind == "path" and arg:
        return dataclasses.replace(base, path_preset=arg)
    raise ConfigError(f"unknown ablation variant {variant!r}")


def required_multiple(configs: Sequence[MstnConfig]) -> int:
    return max(c.multiple for c in configs)


def run_ablation(
    variants: Sequence[str],
    base: MstnConfig,
    train_cfg: TrainConfig,
    train_data: tuple,
    test_data: tuple,
    seeds: Sequence[int],
    progress: Optional[Callable[[str], None]] = None,
) -> tuple[list, list]:
    """Train every variant under every seed; return (per-run rows, per-variant summary)."""
    configs = {v: variant_config(base, v) for v in variants}
    m = required_multiple(configs.values())
    if train_cfg.patch % m:
        raise ConfigError(f"patch {train_cfg.patch} must be divisible by {m} for variants {list(variants)}")
    rows = []
    for v, cfg in configs.items():
        for seed in seeds:
            tc = dataclasses.replace(train_cfg, seed=seed)
            model = build(cfg, seed=seed)
            trainer = Trainer(model, tc)
            losses = trainer.run(*train_data)
            rep = evaluate_model(model, *test_data)
            rows.append({
                "variant": v,
                "seed": seed,
                "psnr_db": rep.psnr_db,
                "ssim": rep.ssim,
                "final_loss": float(np.mean(losses[-50:])),
                "params": sum(p.data.size for p in model.parameters()),
            })
            if progress:
                progress(f"{v} seed={seed} psnr={rep.psnr_db:.3f} ssim={rep.ssim:.4f}")
    summary = summarise(rows, list(configs))
    return rows, summary


def summarise(rows: Sequence[dict], order: Sequence[str]) -> list:
    out = []
    for v in order:
        sel = [r for r in rows if r["variant"] == v]
        ps = np.array([r["psnr_db"] for r in sel])
        ss = np.array([r["ssim"] for r in sel])
        out.append({
            "variant": v,
            "n_seeds": len(sel),
            "params": sel[0]["params"],
            "psnr_db_mean": float(ps.mean()),
            "psnr_db_min": float(ps.min()),
            "psnr_db_max": float(ps.max()),
            "ssim_mean": float(ss.mean()),
        })
    return out
