"""Coordinate (smooth-L1) and heatmap (Adaptive Wing) losses, per-stage and cascade totals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import ConfigError
from .numerics import Tensor


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.5
    w: float = 1.2
    delta: float = 1.0
    alpha: float = 2.1
    omega: float = 14.0
    epsilon: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        if self.w < 1:
            raise ConfigError(f"w must be >= 1, got {self.w}")
        if min(self.delta, self.omega, self.epsilon, self.theta) <= 0:
            raise ConfigError("delta, omega, epsilon and theta must be positive")
        if self.alpha <= 1:
            raise ConfigError(f"AWing alpha must exceed 1, got {self.alpha}")

    @classmethod
    def from_config(cls, cfg) -> "LossConfig":
        return cls(cfg.beta, cfg.w, cfg.delta, cfg.awing_alpha, cfg.awing_omega, cfg.awing_epsilon, cfg.awing_theta)


def _check_shapes(a: Tensor, b) -> None:
    if tuple(a.shape) != tuple(np.shape(b)):
        raise nx.DimensionError(f"prediction shape {a.shape} != target shape {np.shape(b)}")


def smooth_l1_elementwise(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    _check_shapes(pred, t)
    e = pred.data - t
    a = np.abs(e)
    small = a < delta
    value = np.where(small, 0.5 * e * e / delta, a - 0.5 * delta)
    deriv = np.where(small, e / delta, np.sign(e))
    return nx.elementwise(pred, value, deriv)


def smooth_l1(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Summed over landmarks and coordinates: ``0.5 e^2 / delta`` inside ``delta``, ``|e| - delta / 2`` outside."""
    return smooth_l1_elementwise(pred, target, delta).sum()


def awing_constants(y: np.ndarray, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    """Linear-branch slope ``A`` and offset ``C`` making the loss C^1 at ``|e| = theta``."""
    p = cfg.alpha - y
    r = cfg.theta / cfg.epsilon
    a = cfg.omega * (1.0 / (1.0 + r**p)) * p * r ** (p - 1.0) / cfg.epsilon
    c = cfg.theta * a - cfg.omega * np.log1p(r**p)
    return a, c


def awing_value(e: np.ndarray, y: np.ndarray, cfg: LossConfig) -> np.ndarray:
    a_abs = np.abs(e)
    p = cfg.alpha - y
    A, C = awing_constants(y, cfg)
    small = cfg.omega * np.log1p((np.minimum(a_abs, cfg.theta) / cfg.epsilon) ** p)
    return np.where(a_abs < cfg.theta, small, A * a_abs - C)


def awing_derivative(e: np.ndarray, y: np.ndarray, cfg: LossConfig) -> np.ndarray:
    a_abs = np.abs(e)
    p = cfg.alpha - y
    A, _ = awing_constants(y, cfg)
    u = np.minimum(a_abs, cfg.theta) / cfg.epsilon
    small = cfg.omega * p * u ** (p - 1.0) / (cfg.epsilon * (1.0 + u**p))
    return np.sign(e) * np.where(a_abs < cfg.theta, small, A)


def adaptive_wing_elementwise(pred_h: Tensor, target_h, cfg: LossConfig) -> Tensor:
    y = np.asarray(target_h.data if isinstance(target_h, Tensor) else target_h, dtype=pred_h.dtype)
    _check_shapes(pred_h, y)
    if y.min(initial=0.0) < 0 or y.max(initial=0.0) > 1:
        raise ValueError("AWing targets must lie in [0, 1]")
    e = pred_h.data - y
    return nx.elementwise(pred_h, awing_value(e, y, cfg), awing_derivative(e, y, cfg))


def adaptive_wing(pred_h: Tensor, target_h, cfg: LossConfig | None = None) -> Tensor:
    """Adaptive Wing loss, mean over pixels and landmarks."""
    return adaptive_wing_elementwise(pred_h, target_h, cfg or LossConfig()).mean()


@dataclass
class StageLossReport:
    total: Tensor
    coord: Tensor
    heat: Tensor

    def floats(self) -> tuple[float, float, float]:
        return float(self.total.data), float(self.coord.data), float(self.heat.data)


def stage_loss(mu: Tensor, y, h: Tensor, z, cfg: LossConfig) -> StageLossReport:
    """``sum_i d1(mu_i, y_i) + beta * d2(h_i, z_i)``, averaged over a leading batch axis if present.

    ``d2`` of one landmark is the AWing mean over its pixels.
    """
    d1 = smooth_l1_elementwise(mu, y, cfg.delta).sum(axis=-1)  # (..., M)
    d2 = adaptive_wing_elementwise(h, z, cfg)
    d2 = d2.mean(axis=(-2, -1))  # (..., M)
    n = int(np.prod(d1.shape[:-1])) if d1.ndim > 1 else 1
    coord = d1.sum() * (1.0 / n)
    heat = d2.sum() * (1.0 / n)
    return StageLossReport(coord + heat * cfg.beta, coord, heat)


def stage_weights(n_blocks: int, w: float) -> np.ndarray:
    """``w^(j-B)`` for ``j = 1..B``; the last stage always has weight 1."""
    if n_blocks < 1:
        raise ConfigError("need at least one stage")
    if w < 1:
        raise ConfigError(f"w must be >= 1, got {w}")
    j = np.arange(1, n_blocks + 1)
    return np.power(float(w), (j - n_blocks).astype(np.float64))


def total_loss(stage_losses: list, w: float):
    weights = stage_weights(len(stage_losses), w)
    total = None
    for wt, loss in zip(weights, stage_losses):
        term = loss * float(wt)
        total = term if total is None else total + term
    return total
