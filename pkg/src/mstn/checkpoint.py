"""Binary checkpoint container.

Layout (little-endian)::

    b"MSTN" | u32 version | u64 len | config JSON (UTF-8) | u32 count |
    count x ( u16 name_len | name (UTF-8) | 4 x u32 shape | float32 data )

Shapes of lower rank are padded with trailing ones; the model rebuilt from
the config JSON supplies the true shapes on load.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import Mstn, MstnConfig, build
from .train import Adam, TrainConfig

MAGIC = b"MSTN"
VERSION = 1


class CheckpointError(Exception):
    """A checkpoint could not be read.  ``reason`` is a short machine-readable tag."""

    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


def _pad4(shape: tuple) -> tuple:
    if len(shape) > 4:
        raise ValueError(f"cannot store rank-{len(shape)} tensor")
    return tuple(shape) + (1,) * (4 - len(shape))


def encode(config: dict, tensors: list) -> bytes:
    buf = io.BytesIO()
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<4I", *_pad4(arr.shape)))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated", f"file ends while reading {what} at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes) -> tuple[dict, list]:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad_magic", "file does not start with b'MSTN'")
    version, n = r.unpack("<IQ", "header")
    if version != VERSION:
        raise CheckpointError("version", f"unsupported format version {version} (expected {VERSION})")
    try:
        config = json.loads(r.take(n, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("bad_config", str(exc)) from exc
    (count,) = r.unpack("<I", "tensor count")
    tensors = []
    for i in range(count):
        (ln,) = r.unpack("<H", f"name length of tensor {i}")
        name = r.take(ln, f"name of tensor {i}").decode("utf-8", errors="replace")
        shape = r.unpack("<4I", f"shape of {name}")
        size = int(np.prod(shape))
        arr = np.frombuffer(r.take(4 * size, f"data of {name}"), dtype="<f4").reshape(shape)
        tensors.append((name, arr))
    if r.pos != len(data):
        raise CheckpointError("trailing_bytes", f"{len(data) - r.pos} unexpected bytes after last tensor")
    return config, tensors


def checkpoint_bytes(model: Mstn, adam: Optional[Adam] = None, extra: Optional[dict] = None) -> bytes:
    config = {"model": model.config.to_dict(), "adam_step": adam.t if adam else 0}
    if extra:
        config.update(extra)
    named = list(model.named_parameters())
    tensors = [(name, p.data) for name, p in named]
    if adam is not None:
        tensors += [(f"adam.m/{name}", m) for (name, _), m in zip(named, adam.m)]
        tensors += [(f"adam.v/{name}", v) for (name, _), v in zip(named, adam.v)]
    return encode(config, tensors)


def save_checkpoint(model: Mstn, adam: Optional[Adam], path, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, adam, extra))


def load_checkpoint(path, expect: Optional[MstnConfig] = None, dtype=np.float32):
    """Return ``(model, adam, config_blob)``; ``adam`` is None if no moments were stored."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError("io", str(exc)) from exc
    blob, tensors = decode(data)
    try:
        mcfg = MstnConfig.from_dict(blob["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError("bad_config", f"model config unusable: {exc}") from exc
    if expect is not None and expect != mcfg:
        raise CheckpointError("config_mismatch", f"checkpoint holds {mcfg}, expected {expect}")
    model = build(mcfg, 0, dtype)
    stored = dict(tensors)
    named = list(model.named_parameters())
    expected_names = {n for n, _ in named}
    has_adam = any(k.startswith("adam.") for k in stored)
    if has_adam:
        expected_names |= {f"adam.{s}/{n}" for n, _ in named for s in "mv"}
    if set(stored) != expected_names:
        missing = sorted(expected_names - set(stored))[:3]
        extra = sorted(set(stored) - expected_names)[:3]
        raise CheckpointError("tensor_mismatch", f"missing {missing}, unexpected {extra}")

    def fetch(key, like):
        arr = stored[key]
        if arr.size != like.size:
            raise CheckpointError("shape_mismatch", f"{key}: stored {arr.shape}, model needs {like.shape}")
        return arr.reshape(like.shape).astype(dtype)

    for name, p in named:
        p.data = fetch(name, p.data)
    adam = None
    if has_adam:
        tc = TrainConfig.from_dict(blob["train"]) if "train" in blob else TrainConfig()
        adam = Adam(model.parameters(), tc.beta1, tc.beta2, tc.eps_adam)
        adam.m = [fetch(f"adam.m/{n}", p.data) for n, p in named]
        adam.v = [fetch(f"adam.v/{n}", p.data) for n, p in named]
        adam.t = int(blob.get("adam_step", 0))
    return model, adam, blob
