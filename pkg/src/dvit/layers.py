"""Parameter containers and the handful of layers the model is built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def parameter(data: np.ndarray, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Module:
    """Base class. Parameters are discovered from attributes in definition order."""

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise nx.DimensionError(f"{name}: stored shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()


class Linear(Module):
    """``y = x @ W + b`` with ``W`` of shape ``(in, out)``."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64, zero: bool = False):
        scale = 0.0 if zero else math.sqrt(1.0 / n_in)
        self.weight = parameter(rng.normal(0.0, 1.0, (n_in, n_out)) * scale, dtype)
        self.bias = parameter(np.zeros(n_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = nx.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
        dtype=np.float64,
        zero: bool = False,
        gain: float = 1.0,
    ):
        fan_in = c_in * kernel * kernel
        scale = 0.0 if zero else gain * math.sqrt(2.0 / fan_in)
        self.weight = parameter(rng.normal(0.0, 1.0, (c_out, c_in, kernel, kernel)) * scale, dtype)
        self.bias = parameter(np.zeros(c_out), dtype) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return nx.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, n: int, dtype=np.float64, eps: float = 1e-5):
        self.gain = parameter(np.ones(n), dtype)
        self.bias = parameter(np.zeros(n), dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gain, self.bias, eps=self.eps)


def count_parameters(module: Module) -> tuple[int, dict[str, int]]:
    """Total scalar parameter count and a per-top-level-submodule breakdown."""
    breakdown: dict[str, int] = {}
    total = 0
    for name, p in module.named_parameters():
        parts = name.split(".")
        # list members get their own row: "blocks.3", "lsc_proj.0"
        top = ".".join(parts[:2]) if len(parts) > 2 and parts[1].isdigit() else parts[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
        total += p.size
    return total, breakdown
