"""Triangular multi-scale topological grid.

Branch ``j`` runs at resolution H/2**j.  Row 0 holds one residual block per
branch (fed by a learned stride-2 conv from the branch above); every later
cell ``(i, j)`` fuses ``R[i-1, j]`` with ``R[i-1, j+1]`` through an MFFM.
Cell ``(i, j)`` exists iff ``i + j <= scales - 1`` and the image is read off
``R[scales-1, 0]`` through a 3x3 conv.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fusion import Mffm
from .layers import ConvLayer, Module, ResidualBlock, downsample_layer
from .tensor import ConfigError, ShapeError, Tensor

PATH_PRESETS = ("full", "dark_gray", "blue", "orange", "gray")


@dataclass(frozen=True)
class MstnConfig:
    rows: int = 5
    scales: int = 5
    base_channels: int = 8
    use_afsm: bool = True
    use_mffm: bool = True
    path_preset: str = "full"

    def __post_init__(self):
        if self.rows < 1 or self.scales < 1:
            raise ConfigError(f"grid needs rows, scales >= 1, got {self.rows}x{self.scales}")
        if self.rows != self.scales:
            raise ConfigError(f"only square grids are supported, got rows={self.rows} scales={self.scales}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.path_preset not in PATH_PRESETS:
            raise ConfigError(f"unknown path preset {self.path_preset!r}; choose from {PATH_PRESETS}")
        if self.path_preset != "full":
            scales_used = _preset_scales(self.path_preset, self.scales)
            if scales_used > self.scales:
                raise ConfigError(f"path {self.path_preset!r} needs {scales_used} scales, grid has {self.scales}")

    def width(self, j: int) -> int:
        return self.base_channels * min(2**j, 8)

    @property
    def multiple(self) -> int:
        """Input H and W must be divisible by this."""
        return 2 ** (self.scales - 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MstnConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown MstnConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class GridCell:
    row: int
    col: int
    kind: str  # "RB" or "MFFM"

    @property
    def key(self) -> str:
        return f"{self.kind.lower()}_{self.row}_{self.col}"


def _preset_scales(preset: str, scales: int) -> int:
    return {"dark_gray": 1, "blue": 2, "orange": 3, "gray": scales}[preset]


def apply_path_preset(config: MstnConfig) -> "GridPlan":
    """Resolve which lattice cells a config keeps.

    ``full`` keeps the whole triangle.  The path presets keep the row-0 RBs
    on the first K branches, climb back to branch 0 along the diagonal
    ``i + j = K - 1`` with MFFMs and finish on branch 0 so that every path has
    ``scales - 1`` cells after row 0.  K = 1 (dark_gray) uses RBs there since
    there is nothing to fuse.
    """
    n = config.scales
    if not config.use_mffm:
        # no cross-scale edges: branch 0 is a plain chain of RBs
        cells = [GridCell(0, 0, "RB")] + [GridCell(i, 0, "RB") for i in range(1, n)]
        return GridPlan(config, cells)
    if config.path_preset == "full":
        cells = [GridCell(0, j, "RB") for j in range(n)]
        for i in range(1, n):
            cells += [GridCell(i, j, "MFFM") for j in range(n - i)]
        return GridPlan(config, cells)
    k = _preset_scales(config.path_preset, n)
    cells = [GridCell(0, j, "RB") for j in range(k)]
    if k == 1:
        cells += [GridCell(i, 0, "RB") for i in range(1, n)]
    else:
        cells += [GridCell(i, k - 1 - i, "MFFM") for i in range(1, k)]
        cells += [GridCell(i, 0, "MFFM") for i in range(k, n)]
    return GridPlan(config, cells)


@dataclass
class GridPlan:
    config: MstnConfig
    cells: list = field(default_factory=list)

    @property
    def branches(self) -> int:
        return 1 + max(c.col for c in self.cells if c.row == 0)

    def parents(self, cell: GridCell) -> tuple:
        """Input cells of ``cell``: the latest earlier output on each source branch."""
        if cell.row == 0:
            return () if cell.col == 0 else (("down", cell.col - 1),)
        srcs = [cell.col] if cell.kind == "RB" else [cell.col, cell.col + 1]
        out = []
        for j in srcs:
            rows = [c.row for c in self.cells if c.col == j and c.row < cell.row]
            if not rows:
                raise ConfigError(f"cell {cell.key} has no input on branch {j}")
            out.append((max(rows), j))
        return tuple(out)

    def count(self, kind: str) -> int:
        return sum(c.kind == kind for c in self.cells)


class Mstn(Module):
    def __init__(self, config: MstnConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.plan = apply_path_preset(config)
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        # attribute insertion order fixes registry order and rng consumption
        for cell in sorted(self.plan.cells, key=lambda c: (c.row, c.col)):
            j = cell.col
            if cell.row == 0:
                if j > 0:
                    setattr(self, f"down_{j}", downsample_layer(config.width(j - 1), config.width(j), rng, dtype))
                cin = 3 if j == 0 else config.width(j)
                setattr(self, cell.key, ResidualBlock(cin, config.width(j), rng, dtype))
            elif cell.kind == "RB":
                setattr(self, cell.key, ResidualBlock(config.width(j), config.width(j), rng, dtype))
            else:
                setattr(self, cell.key, Mffm(config.width(j), config.width(j + 1), config.use_afsm, rng, dtype,
                                             name=f"MFFM cell ({cell.row},{cell.col})"))
        self.tail = ConvLayer(config.width(0), 3, 3, 1, 1, rng, dtype)

    def cells(self) -> list:
        return self.plan.cells

    def __call__(self, hazy: Tensor) -> Tensor:
        return self.forward(hazy)

    def forward(self, hazy: Tensor, keep: Optional[dict] = None) -> Tensor:
        if hazy.data.ndim != 4 or hazy.shape[1] != 3:
            raise ShapeError(f"MSTN expects (N,3,H,W) input, got {hazy.shape}")
        m = self.config.multiple
        h, w = hazy.shape[2:]
        if h % m or w % m:
            raise ShapeError(
                f"input {h}x{w} is not divisible by {m} (= 2**(scales-1)); pad the image first"
            )
        outs: dict = {} if keep is None else keep
        for cell in sorted(self.plan.cells, key=lambda c: (c.row, c.col)):
            block = getattr(self, cell.key)
            if cell.row == 0:
                x = hazy if cell.col == 0 else getattr(self, f"down_{cell.col}")(outs[(0, cell.col - 1)])
                outs[(0, cell.col)] = block(x)
                continue
            ins = [outs[p] for p in self.plan.parents(cell)]
            outs[(cell.row, cell.col)] = block(*ins)
        last = max(c.row for c in self.plan.cells if c.col == 0)
        return self.tail(outs[(last, 0)])


def build(config: MstnConfig, seed: int = 0, dtype=np.float32) -> Mstn:
    return Mstn(config, seed, dtype)


def forward(model: Mstn, hazy: Tensor) -> Tensor:
    return model.forward(hazy)


def param_count(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def config_json(config: MstnConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
