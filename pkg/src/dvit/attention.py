"""Scaled dot-product attention, multi-head attention and the pre-norm encoder block."""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .layers import LayerNorm, Linear, Module, parameter
from .numerics import Tensor


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """``softmax(q k^T / sqrt(d)) v`` over the last two axes."""
    d = q.shape[-1]
    if d == 0:
        raise ValueError("attention width d must be positive")
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise nx.DimensionError(f"attention shape mismatch: Q{q.shape} K{k.shape} V{v.shape}")
    scores = nx.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    weights = nx.softmax(scores, axis=-1)
    out = nx.matmul(weights, v)
    return (out, weights) if return_weights else out


class AttentionParams(Module):
    """Projections ``W_q, W_k, W_v, W_o``, each ``(d_model, d_model)``."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float64, zero_out: bool = False, dropout: float = 0.0):
        if n_heads < 1 or d_model % n_heads:
            raise ValueError(f"d_model={d_model} must be divisible by n_heads={n_heads}")
        s = 1.0 / math.sqrt(d_model)
        self.w_q = parameter(rng.normal(0, s, (d_model, d_model)), dtype)
        self.w_k = parameter(rng.normal(0, s, (d_model, d_model)), dtype)
        self.w_v = parameter(rng.normal(0, s, (d_model, d_model)), dtype)
        self.w_o = parameter(np.zeros((d_model, d_model)) if zero_out else rng.normal(0, s, (d_model, d_model)), dtype)
        self.n_heads = n_heads
        self.dropout = dropout
        self._rng = np.random.default_rng(rng.integers(2**63)) if dropout > 0 else None

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return multi_head_attention(x, self)


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    *lead, length, d = t.shape
    t = t.reshape(tuple(lead) + (length, n_heads, d // n_heads))
    return t.swapaxes(-2, -3)


def multi_head_attention(x: Tensor, p: AttentionParams) -> Tensor:
    *lead, length, d = x.shape
    if d != p.d_model:
        raise nx.DimensionError(f"token width {d} != attention d_model {p.d_model}")
    h = p.n_heads
    q = _split_heads(nx.matmul(x, p.w_q), h)
    k = _split_heads(nx.matmul(x, p.w_k), h)
    v = _split_heads(nx.matmul(x, p.w_v), h)
    dh = d // h
    scores = nx.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    weights = nx.softmax(scores, axis=-1)
    if p.dropout > 0 and p.training:
        keep = (p._rng.random(weights.shape) >= p.dropout) / (1.0 - p.dropout)
        weights = weights * keep.astype(weights.dtype)
    heads = nx.matmul(weights, v).swapaxes(-2, -3)
    merged = heads.reshape(tuple(lead) + (length, d))
    return nx.matmul(merged, p.w_o)


class EncoderBlockParams(Module):
    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        dtype=np.float64,
        zero_out: bool = False,
        dropout: float = 0.0,
    ):
        self.ln1 = LayerNorm(d_model, dtype)
        self.attention = AttentionParams(d_model, n_heads, rng, dtype, zero_out=zero_out, dropout=dropout)
        self.ln2 = LayerNorm(d_model, dtype)
        self.fc1 = Linear(d_model, mlp_ratio * d_model, rng, dtype=dtype)
        self.fc2 = Linear(mlp_ratio * d_model, d_model, rng, dtype=dtype, zero=zero_out)

    def forward(self, x: Tensor) -> Tensor:
        return encoder_block(x, self)


def encoder_block(x: Tensor, p: EncoderBlockParams) -> Tensor:
    """Pre-norm layout: ``x + MHA(LN(x))`` then ``+ MLP(LN(.))``."""
    x = x + multi_head_attention(p.ln1(x), p.attention)
    return x + p.fc2(nx.gelu(p.fc1(p.ln2(x))))


class PositionalEmbedding(Module):
    """Learnable ``(L, d)`` table, zero at initialization."""

    def __init__(self, length: int, d_model: int, dtype=np.float64):
        if length < 1 or d_model < 1:
            raise ValueError("positional table needs L, d >= 1")
        self.table = parameter(np.zeros((length, d_model)), dtype)

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-2:] != self.table.shape:
            raise nx.DimensionError(f"tokens {tokens.shape} do not match positional table {self.table.shape}")
        return tokens + self.table


def positional_embedding(length: int, d_model: int, dtype=np.float64) -> PositionalEmbedding:
    return PositionalEmbedding(length, d_model, dtype)


class Encoder(Module):
    """Positional table followed by a stack of encoder blocks and a final LayerNorm."""

    def __init__(self, length: int, d_model: int, depth: int, n_heads: int, rng, mlp_ratio: int = 4, dtype=np.float64, dropout: float = 0.0):
        self.pos = PositionalEmbedding(length, d_model, dtype)
        self.blocks = [EncoderBlockParams(d_model, n_heads, rng, mlp_ratio, dtype, dropout=dropout) for _ in range(depth)]
        self.norm = LayerNorm(d_model, dtype)

    def forward(self, tokens: Tensor) -> Tensor:
        x = self.pos(tokens)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)
