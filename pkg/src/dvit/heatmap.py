"""Gaussian heatmap targets and soft-argmax decoding.

Coordinates are ``(x, y) = (col, row)`` in heatmap pixels, with pixel ``(r, c)``
centred at ``(c, r)``. The same convention maps heatmap coordinates to image
pixels via :func:`heatmap_to_image` / :func:`image_to_heatmap`.
"""

from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np

from . import numerics as nx
from .config import ConfigError
from .numerics import Tensor


@lru_cache(maxsize=32)
def _grid(height: int, width: int, dtype: str) -> np.ndarray:
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    g = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(dtype)
    g.setflags(write=False)
    return g


def make_grid(height: int, width: int, dtype=np.float64) -> np.ndarray:
    """``(H*W, 2)`` pixel-centre coordinates in row-major pixel order."""
    return _grid(height, width, np.dtype(dtype).name)


def clamp_to_grid(y: np.ndarray, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    lo = np.zeros(2)
    hi = np.array([width - 1, height - 1], dtype=np.float64)
    clamped = np.clip(y, lo, hi)
    flags = np.any(clamped != y, axis=-1)
    return clamped, flags


def encode_gaussian(y: np.ndarray, height: int, width: int, sigma: float, return_flags: bool = False):
    """Per-landmark normalized Gaussian ``exp(-|g - y|^2 / (2 sigma^2))``.

    ``y`` is ``(..., M, 2)``. Landmarks off the grid are clamped onto it; a
    warning is raised and, with ``return_flags``, the per-landmark flags returned.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    y, flags = clamp_to_grid(y, height, width)
    if flags.any():
        warnings.warn(f"{int(flags.sum())} landmark(s) outside the {height}x{width} grid were clamped", stacklevel=2)
    g = make_grid(height, width)
    d2 = ((g[None, :, :] - y.reshape(-1, 1, 2)) ** 2).sum(axis=-1)
    z = np.exp(-d2 / (2.0 * sigma * sigma))
    z /= z.sum(axis=-1, keepdims=True)
    z = z.reshape(y.shape[:-1] + (height, width))
    return (z, flags) if return_flags else z


def normalize_heatmap(h_raw: Tensor, temperature: float = 1.0, mode: str = "softmax") -> Tensor:
    """Turn raw head output ``(..., M, H, W)`` into per-landmark distributions.

    ``mode="sum"`` divides by the spatial sum instead; it assumes positive inputs.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    shape = h_raw.shape
    flat = h_raw.reshape(shape[:-2] + (shape[-2] * shape[-1],))
    if mode == "softmax":
        p = nx.softmax(flat * (1.0 / temperature), axis=-1)
    elif mode == "sum":
        p = flat / flat.sum(axis=-1, keepdims=True)
    else:
        raise ConfigError(f"unknown normalizer {mode!r}")
    return p.reshape(shape)


def soft_argmax(h: Tensor, check: bool = True, atol: float = 1e-4) -> Tensor:
    """Expected grid coordinate under each normalized heatmap: ``(..., M, H, W) -> (..., M, 2)``."""
    *lead, height, width = h.shape
    if check:
        sums = h.data.reshape(tuple(lead) + (-1,)).sum(axis=-1)
        if np.any(h.data < -atol) or not np.allclose(sums, 1.0, atol=atol):
            raise ValueError("soft_argmax needs normalized heatmaps; apply normalize_heatmap first")
    flat = h.reshape(tuple(lead) + (height * width,))
    g = Tensor(make_grid(height, width, h.dtype))
    return nx.matmul(flat, g)


def decode(h_raw: Tensor, temperature: float = 1.0, mode: str = "softmax") -> Tensor:
    return soft_argmax(normalize_heatmap(h_raw, temperature, mode), check=False)


def image_to_heatmap(y_img: np.ndarray, resolution: int, height: int) -> np.ndarray:
    s = resolution / height
    return (np.asarray(y_img) + 0.5) / s - 0.5


def heatmap_to_image(y_hm: np.ndarray, resolution: int, height: int) -> np.ndarray:
    s = resolution / height
    return (np.asarray(y_hm) + 0.5) * s - 0.5
