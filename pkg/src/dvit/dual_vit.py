"""Spatial-split and channel-split ViT branches, their fusion, and the heatmap head.

Shapes are written for a single feature map ``(C, H, W)``; every module also
accepts a leading batch axis.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .attention import Encoder
from .config import ConfigError
from .layers import Conv2d, Linear, Module
from .numerics import Tensor


class SpatialSplitViT(Module):
    """Patch tokens -> encoder -> per-token projection -> pixel shuffle back to ``(out_channels, H, W)``."""

    def __init__(self, channels, height, width, patch, d_model, depth, n_heads, rng, out_channels=None, mlp_ratio=4, dtype=np.float64, dropout=0.0):
        if height % patch or width % patch:
            raise ConfigError(f"feature map {height}x{width} not divisible by patch size {patch}")
        self.patch = patch
        self.grid = (height // patch, width // patch)
        self.out_channels = out_channels or channels // 2
        self.embed = Conv2d(channels, d_model, patch, rng, stride=patch, dtype=dtype, gain=0.5 ** 0.5)
        self.encoder = Encoder(self.grid[0] * self.grid[1], d_model, depth, n_heads, rng, mlp_ratio, dtype, dropout)
        self.unembed = Linear(d_model, self.out_channels * patch * patch, rng, dtype=dtype)

    @property
    def n_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-3]
        e = self.embed(x)  # (..., d, h, w)
        d = e.shape[-3]
        tokens = e.reshape(lead + (d, self.n_tokens)).swapaxes(-1, -2)
        y = self.unembed(self.encoder(tokens))  # (..., L, out*p*p)
        y = y.swapaxes(-1, -2).reshape(lead + (y.shape[-1],) + self.grid)
        return nx.pixel_shuffle(y, self.patch)


def spatial_split_vit(x: Tensor, p: SpatialSplitViT) -> Tensor:
    return p(x)


class ChannelSplitViT(Module):
    """One token per channel of the stride-2-halved map; pixel shuffle (r=2) restores ``(C/4, H, W)``."""

    def __init__(self, channels, height, width, d_model, depth, n_heads, rng, mlp_ratio=4, dtype=np.float64, dropout=0.0):
        if height % 2 or width % 2:
            raise ConfigError(f"channel-split branch needs even H, W; got {height}x{width}")
        if channels % 4:
            raise ConfigError(f"channel-split branch needs C divisible by 4; got {channels}")
        self.half = (height // 2, width // 2)
        self.token_len = self.half[0] * self.half[1]
        self.halve = Conv2d(channels, channels, 3, rng, stride=2, padding=1, dtype=dtype)
        self.embed = Linear(self.token_len, d_model, rng, dtype=dtype)
        self.encoder = Encoder(channels, d_model, depth, n_heads, rng, mlp_ratio, dtype, dropout)
        self.unembed = Linear(d_model, self.token_len, rng, dtype=dtype)
        self.out_channels = channels // 4

    def tokens(self, x: Tensor) -> Tensor:
        """``(..., C, H, W)`` -> ``(..., C, (H/2)(W/2))`` channel tokens."""
        h = self.halve(x)
        return h.reshape(h.shape[:-2] + (self.token_len,))

    def encode_tokens(self, tokens: Tensor) -> Tensor:
        """Channel tokens -> encoded maps ``(..., C, H/2, W/2)``, before pixel shuffle."""
        y = self.unembed(self.encoder(self.embed(tokens)))
        return y.reshape(y.shape[:-1] + self.half)

    def forward(self, x: Tensor) -> Tensor:
        return nx.pixel_shuffle(self.encode_tokens(self.tokens(x)), 2)


def channel_split_vit(x: Tensor, p: ChannelSplitViT) -> Tensor:
    return p(x)


class ResidualConvBlock(Module):
    """``shortcut(x) + conv3(gelu(conv3(x)))`` with a 1x1 shortcut projection."""

    def __init__(self, c_in, c_out, rng, dtype=np.float64):
        self.shortcut = Conv2d(c_in, c_out, 1, rng, dtype=dtype, gain=0.5 ** 0.5)
        self.conv1 = Conv2d(c_in, c_out, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1, dtype=dtype, gain=0.5 ** 0.5)

    def forward(self, x: Tensor) -> Tensor:
        return self.shortcut(x) + self.conv2(nx.gelu(self.conv1(x)))


def dvit_fuse(spatial_out: Tensor | None, channel_out: Tensor | None, p: ResidualConvBlock) -> Tensor:
    """Concatenate branch outputs along channels and fuse with a residual conv block."""
    parts = [t for t in (spatial_out, channel_out) if t is not None]
    if len(parts) == 2 and parts[0].shape[-2:] != parts[1].shape[-2:]:
        raise nx.DimensionError(f"branch spatial sizes differ: {parts[0].shape} vs {parts[1].shape}")
    x = parts[0] if len(parts) == 1 else nx.concat(parts, axis=-3)
    return p(x)


class SupervisionHead(Module):
    """1x1 convolution: heatmap ``i`` is ``sum_m alpha[i, m] f_m + b_i``."""

    def __init__(self, channels, landmarks, rng, bias=True, dtype=np.float64):
        self.conv = Conv2d(channels, landmarks, 1, rng, bias=bias, dtype=dtype, gain=0.5)

    @property
    def alpha(self) -> Tensor:
        w = self.conv.weight
        return w.reshape(w.shape[:2])

    def forward(self, f: Tensor) -> Tensor:
        return self.conv(f)


def supervision_head(f: Tensor, p: SupervisionHead) -> Tensor:
    return p(f)


class PredictionBlock(Module):
    """One cascade stage: branches -> fusion -> (features for next stage, supervision heatmaps)."""

    def __init__(self, cfg, rng, kind: str | None = None):
        kind = kind or cfg.block_kind
        dtype = np.dtype(cfg.dtype)
        c = cfg.channels
        self.kind = kind
        self.shape = (c, cfg.height, cfg.width)
        self.spatial = None
        self.channel = None
        fused_in = 0
        if kind in ("dvit", "spatial"):
            self.spatial = SpatialSplitViT(
                c, cfg.height, cfg.width, cfg.patch, cfg.spatial_dim, cfg.spatial_depth, cfg.spatial_heads,
                rng, mlp_ratio=cfg.mlp_ratio, dtype=dtype, dropout=cfg.attn_dropout,
            )
            fused_in += self.spatial.out_channels
        if kind in ("dvit", "channel"):
            self.channel = ChannelSplitViT(
                c, cfg.height, cfg.width, cfg.channel_dim, cfg.channel_depth, cfg.channel_heads,
                rng, mlp_ratio=cfg.mlp_ratio, dtype=dtype, dropout=cfg.attn_dropout,
            )
            fused_in += self.channel.out_channels
        if fused_in == 0:
            raise ConfigError(f"unknown block kind {kind!r}")
        self.fuse = ResidualConvBlock(fused_in, c, rng, dtype)
        self.head = SupervisionHead(c, cfg.landmarks, rng, bias=cfg.head_bias, dtype=dtype)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[-3:] != self.shape:
            raise nx.DimensionError(f"prediction block expects (..., {self.shape}), got {x.shape}")
        s = self.spatial(x) if self.spatial is not None else None
        c = self.channel(x) if self.channel is not None else None
        fused = dvit_fuse(s, c, self.fuse)
        return fused, self.head(fused)


def prediction_block_forward(x: Tensor, p: PredictionBlock) -> tuple[Tensor, Tensor]:
    return p(x)
