"""Command-line entry point: ``mstn <command> ...``.

Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import haze
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .experiments import dehaze, evaluate_model, run_ablation
from .gradcheck import run_standard_checks
from .grid import MstnConfig, build
from .metrics import evaluate
from .report import plot_ablation, plot_loss_curve, write_csv
from .tensor import ConfigError
from .train import NumericalError, TrainConfig, Trainer

log = logging.getLogger("mstn")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(path: Path, command: str, config: dict, seed, started: str, outputs: list) -> None:
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "git": _git_describe(),
        "started": started,
        "finished": _now(),
        "outputs": [str(o) for o in outputs],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_run_config(path) -> tuple[MstnConfig, TrainConfig]:
    """Strict JSON: ``{"model": {...}, "train": {...}}``; unknown keys are errors."""
    if path is None:
        return MstnConfig(3, 3, 8), TrainConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(EXIT_USAGE, "config must be a JSON object")
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise CliError(EXIT_USAGE, f"unknown config sections: {sorted(unknown)}")
    try:
        return MstnConfig.from_dict(doc.get("model", {})), TrainConfig.from_dict(doc.get("train", {}))
    except (ConfigError, TypeError) as exc:
        raise CliError(EXIT_USAGE, f"bad config: {exc}") from exc


def _load_data(path):
    try:
        manifest, hazy, clear = haze.load_dataset(path)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_IO, f"cannot load dataset {path}: {exc}") from exc
    return manifest, hazy, clear


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(EXIT_IO, f"cannot load checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    started = _now()
    out = Path(args.out)
    try:
        manifest = haze.generate_dataset(args.n, args.preset, args.size, args.size, args.seed, out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write dataset to {out}: {exc}") from exc
    write_manifest(out / "run_manifest.json", "gen-data",
                   {"preset": args.preset, "n": args.n, "size": args.size}, args.seed, started,
                   [out / "manifest.json", out / "clear", out / "hazy"])
    print(json.dumps({"n": manifest["n"], "manifest_sha256": haze.manifest_hash(manifest), "out": str(out)}))
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    model_cfg, train_cfg = load_run_config(args.config)
    _, hazy, clear = _load_data(args.data)
    out = Path(args.out)
    if args.resume:
        model, adam, blob = _load_ckpt(args.resume)
        if model.config != model_cfg:
            raise CliError(EXIT_USAGE, f"resume checkpoint holds {model.config}, config asks for {model_cfg}")
        st = blob.get("trainer", {})
        trainer = Trainer(model, train_cfg, adam, st.get("iteration", 0), st.get("rng_state"))
    else:
        trainer = Trainer(build(model_cfg, seed=train_cfg.seed), train_cfg)
    log_path = out.with_name(out.name + ".log.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        def on_log(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        try:
            trainer.run(hazy, clear, until=args.until, on_log=on_log)
        except NumericalError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    extra = {"train": train_cfg.to_dict(), "trainer": trainer.state()}
    save_checkpoint(trainer.model, trainer.adam, out, extra)
    outputs = [out, log_path]
    if trainer.losses:
        fig = out.with_name(out.name + ".loss.png")
        plot_loss_curve(trainer.losses, fig, smooth=min(100, max(1, len(trainer.losses) // 5)))
        outputs.append(fig)
    write_manifest(out.with_name(out.name + ".manifest.json"), "train",
                   {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "resume": args.resume},
                   train_cfg.seed, started, outputs)
    last = trainer.losses[-1] if trainer.losses else float("nan")
    print(json.dumps({"iteration": trainer.iteration, "final_loss": last, "checkpoint": str(out)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _now()
    manifest, hazy, clear = _load_data(args.data)
    if args.pred:
        pred_dir = Path(args.pred)
        try:
            preds = np.concatenate([haze.read_png(pred_dir / Path(s["clear_path"]).name)
                                    for s in manifest["samples"]])
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read predictions from {pred_dir}: {exc}") from exc
        report = evaluate(preds, clear)
    else:
        model, _, _ = _load_ckpt(args.ckpt)
        report = evaluate_model(model, hazy, clear)
    doc = {"dataset": str(args.data), **report.to_dict()}
    print(json.dumps(doc))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(doc, indent=1))
        write_manifest(out / "run_manifest.json", "eval", {"ckpt": args.ckpt, "pred": args.pred},
                       None, started, [out / "metrics.json"])
    return EXIT_OK


def cmd_dehaze(args) -> int:
    started = _now()
    model, _, _ = _load_ckpt(args.ckpt)
    try:
        img = haze.read_png(args.inp)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.inp}: {exc}") from exc
    out = dehaze(model, img)
    dst = Path(args.out)
    try:
        dst.parent.mkdir(parents=True, exist_ok=True)
        haze.write_png(dst, out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {dst}: {exc}") from exc
    write_manifest(dst.with_name(dst.name + ".manifest.json"), "dehaze",
                   {"ckpt": args.ckpt, "in": args.inp}, None, started, [dst])
    return EXIT_OK


def cmd_ablate(args) -> int:
    started = _now()
    model_cfg, train_cfg = load_run_config(args.config)
    variants = [v for item in args.variant for v in item.split(",") if v]
    seeds = [int(s) for s in args.seeds.split(",")]
    _, htr, ctr = _load_data(args.data)
    _, hte, cte = _load_data(args.test_data)
    try:
        rows, summary = run_ablation(variants, model_cfg, train_cfg, (htr, ctr), (hte, cte), seeds,
                                     progress=lambda s: log.info(s))
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "ablation_runs.csv", rows)
    write_csv(out / "ablation_summary.csv", summary)
    plot_ablation(summary, out / "ablation_psnr.png")
    write_manifest(out / "run_manifest.json", "ablate",
                   {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "variants": variants},
                   seeds, started,
                   [out / "ablation_runs.csv", out / "ablation_summary.csv", out / "ablation_psnr.png"])
    print(json.dumps({"summary": summary, "runs": rows}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    started = _now()
    results = run_standard_checks(seed=args.seed, eps=args.eps)
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['name']:<24} max_rel_error={r['max_rel_error']:.3e}")
    ok = all(r["passed"] for r in results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(json.dumps(
            [{**r, "max_rel_error": float(r["max_rel_error"])} for r in results], indent=1))
        write_manifest(out / "run_manifest.json", "gradcheck", {"eps": args.eps}, args.seed, started,
                       [out / "gradcheck.json"])
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mstn", description="Multi-scale topological dehazing network")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesise hazy/clear pairs")
    g.add_argument("--preset", choices=["indoor", "outdoor"], required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train with L1 + Adam + cosine schedule")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--until", type=int, help="stop after this many total iterations")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM report as JSON")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt")
    src.add_argument("--pred", help="directory of predicted PNGs named like the clear images")
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dehaze", help="dehaze one PNG")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dehaze)

    a = sub.add_parser("ablate", help="train and compare model variants")
    a.add_argument("--variant", action="append", required=True,
                   help="baseline|no_afsm|no_mffm|scales:K|path:NAME (repeat or comma-separate)")
    a.add_argument("--config")
    a.add_argument("--data", required=True)
    a.add_argument("--test-data", required=True)
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--eps", type=float, default=1e-4)
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)
    return p


def _thread_limit():
    raw = os.environ.get("MSTN_THREADS", "1")
    if not raw.isdigit() or int(raw) < 1:
        raise CliError(EXIT_USAGE, f"MSTN_THREADS must be a positive integer, got {raw!r}")
    n = int(raw)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, haze.HazeParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
