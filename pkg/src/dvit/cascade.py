"""Bottleneck backbone, block-connection strategies, and the cascaded forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import CascadeConfig
from .dual_vit import PredictionBlock
from .layers import Conv2d, Module, count_parameters
from .numerics import Tensor


class Bottleneck(Module):
    def __init__(self, c_in, c_out, stride, rng, dtype=np.float64):
        mid = max(c_out // 4, 2)
        self.reduce = Conv2d(c_in, mid, 1, rng, dtype=dtype)
        self.conv = Conv2d(mid, mid, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.expand = Conv2d(mid, c_out, 1, rng, dtype=dtype, gain=0.5)
        self.shortcut = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype) if (stride != 1 or c_in != c_out) else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.expand(nx.gelu(self.conv(nx.gelu(self.reduce(x)))))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return nx.gelu(y + skip)


class Backbone(Module):
    """Stride-2 stem, then one bottleneck per stage width; early stages take the remaining stride."""

    def __init__(self, cfg: CascadeConfig, rng):
        dtype = np.dtype(cfg.dtype)
        widths = cfg.widths
        self.resolution = cfg.resolution
        self.out_shape = (cfg.channels, cfg.height, cfg.width)
        remaining = cfg.resolution // (2 * cfg.height)
        self.stem = Conv2d(3, widths[0], 3, rng, stride=2, padding=1, dtype=dtype)
        stages = []
        c_prev = widths[0]
        for c in widths:
            stride = 2 if remaining > 1 else 1
            remaining //= stride
            stages.append(Bottleneck(c_prev, c, stride, rng, dtype))
            c_prev = c
        if remaining > 1:
            raise ValueError(f"backbone has too few stages to reach {cfg.height}x{cfg.width} from {cfg.resolution}")
        self.stages = stages

    def forward(self, image: Tensor) -> Tensor:
        if image.shape[-3:] != (3, self.resolution, self.resolution):
            raise nx.DimensionError(f"backbone expects (..., 3, {self.resolution}, {self.resolution}), got {image.shape}")
        x = nx.gelu(self.stem(image))
        for stage in self.stages:
            x = stage(x)
        return x


def backbone_forward(image: Tensor, p: Backbone) -> Tensor:
    return p(image)


def _check_same(*maps: Tensor) -> None:
    shapes = {m.shape for m in maps}
    if len(shapes) > 1:
        raise nx.DimensionError(f"feature map shapes differ: {sorted(shapes)}")


class LSCProjection(Module):
    """1x1 projection of ``concat(prev_out, low)`` back to ``C`` channels."""

    def __init__(self, channels, rng, dtype=np.float64):
        self.proj = Conv2d(2 * channels, channels, 1, rng, dtype=dtype)

    def forward(self, low: Tensor, prev: Tensor) -> Tensor:
        return connect_lsc(low, prev, self)


def connect_lsc(low: Tensor, prev: Tensor | None, p: LSCProjection | None = None) -> Tensor:
    if prev is None:
        return low
    _check_same(low, prev)
    return p.proj(nx.concat([prev, low], axis=-3))


def connect_rescbsp(prev_in: Tensor, prev_out: Tensor) -> Tensor:
    _check_same(prev_in, prev_out)
    return prev_out + prev_in


def connect_denc(all_prev_outs: list[Tensor], low: Tensor | None) -> Tensor:
    maps = list(all_prev_outs) + ([low] if low is not None else [])
    if not maps:
        raise ValueError("dense connection needs at least one feature map")
    _check_same(*maps)
    out = maps[0]
    for m in maps[1:]:
        out = out + m
    return out


@dataclass
class CascadeOutput:
    heatmaps: list[Tensor]
    outputs: list[Tensor]
    inputs: list[Tensor]
    low: Tensor


class Cascade(Module):
    def __init__(self, cfg: CascadeConfig, rng: np.random.Generator | int | None = None):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(cfg.seed if rng is None else rng)
        self.cfg = cfg
        self.backbone = Backbone(cfg, rng)
        self.blocks = [PredictionBlock(cfg, rng) for _ in range(cfg.blocks)]
        dtype = np.dtype(cfg.dtype)
        self.lsc_proj = [LSCProjection(cfg.channels, rng, dtype) for _ in range(cfg.blocks - 1)] if cfg.connection == "LSC" else []

    def forward(self, image: Tensor) -> CascadeOutput:
        return cascade_forward(image, self)


def cascade_forward(image: Tensor, model: Cascade) -> CascadeOutput:
    """Backbone once, then ``B`` prediction blocks wired per ``cfg.connection``."""
    low = model.backbone(image)
    conn = model.cfg.connection
    heatmaps, outputs, inputs = [], [], []
    for j, block in enumerate(model.blocks):
        if j == 0:
            x = low
        elif conn == "LSC":
            x = connect_lsc(low, outputs[-1], model.lsc_proj[j - 1])
        elif conn == "ResCBSP":
            x = connect_rescbsp(inputs[-1], outputs[-1])
        else:
            x = connect_denc(outputs, low)
        out, hm = block(x)
        inputs.append(x)
        outputs.append(out)
        heatmaps.append(hm)
    return CascadeOutput(heatmaps, outputs, inputs, low)


def build_model(cfg: CascadeConfig, seed: int | None = None) -> Cascade:
    return Cascade(cfg, np.random.default_rng(cfg.seed if seed is None else seed))


__all__ = [
    "Backbone",
    "Bottleneck",
    "Cascade",
    "CascadeOutput",
    "LSCProjection",
    "backbone_forward",
    "build_model",
    "cascade_forward",
    "connect_denc",
    "connect_lsc",
    "connect_rescbsp",
    "count_parameters",
]
