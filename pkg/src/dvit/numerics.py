"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray`` and remembers the operation that
produced it. Calling :meth:`Tensor.backward` on a scalar walks the recorded
graph in reverse topological order and accumulates gradients into every leaf
that has ``requires_grad=True``. Graphs are rebuilt on every forward pass.

Gradients accumulate across ``backward`` calls until :meth:`Tensor.zero_grad`
(or ``Module.zero_grad``) resets them.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "as_tensor",
    "no_grad",
    "grad_enabled",
    "matmul",
    "add",
    "mul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "exp",
    "log",
    "softmax",
    "gelu",
    "relu",
    "conv2d",
    "layer_norm",
    "pixel_shuffle",
    "pixel_unshuffle",
    "elementwise",
    "GradCheckReport",
    "grad_check",
    "grad_check_params",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


def grad_enabled() -> bool:
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference, evaluation)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """n-dimensional array with optional gradient and graph lineage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, like=self)))

    def __rsub__(self, other):
        return add(as_tensor(other, like=self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return mul(as_tensor(other, like=self), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    # -- backpropagation --------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every requires_grad leaf.

        Only scalar roots are accepted unless an explicit upstream ``grad`` is given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise DimensionError(f"upstream grad shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    out = ad**exponent
    return _make(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def elementwise(x: Tensor, value: np.ndarray, derivative: np.ndarray) -> Tensor:
    """Wrap a precomputed pointwise function value and its derivative w.r.t. ``x``."""
    if value.shape != x.shape or derivative.shape != x.shape:
        raise DimensionError(f"elementwise value/derivative must match input shape {x.shape}")
    return _make(value, (x,), lambda g: (g * derivative,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


# -- reductions and shape ops --------------------------------------------------
def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return parts

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# -- linear algebra -------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., n, k] @ b[..., k, m]``."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return _make(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax. NaN inputs propagate NaN."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain * x_hat + bias``."""
    n = x.shape[-1]
    for p in (gain, bias):
        if p is not None and p.shape != (n,):
            raise DimensionError(f"layer_norm parameter shape {p.shape} != ({n},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else None
    out = xhat * gd if gd is not None else xhat
    if bias is not None:
        out = out + bias.data

    parents = tuple(t for t in (x, gain, bias) if t is not None)

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gx_hat = g * gd if gd is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return grads

    return _make(out, parents, backward)


# -- convolution -------------------------------------------------------------------
def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col.

    ``x`` is ``(C_in, H, W)`` or ``(N, C_in, H, W)``; ``kernel`` is
    ``(C_out, C_in, k, k)``. Output spatial size is ``(H + 2p - k) // s + 1``.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 3-D/4-D input and 4-D kernel, got {x.shape}, {kernel.shape}")
    n, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if kc != c_in:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"kernel {kernel.shape} larger than padded input {x.shape} (padding={padding})")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({c_out},)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xd, kd = x.data, kernel.data
    kmat = kd.reshape(c_out, -1)

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        # pointwise: channel mixing per pixel
        flat = xd.reshape(n, c_in, h * w)
        out = np.matmul(kmat, flat).reshape(n, c_out, h, w)

        def backward(g):
            gf = g.reshape(n, c_out, h * w)
            gx = np.matmul(kmat.T, gf).reshape(xd.shape) if x.requires_grad else None
            gk = np.einsum("nop,nip->oi", gf, flat).reshape(kd.shape) if kernel.requires_grad else None
            grads = [gx, gk]
            if bias is not None:
                grads.append(g.sum(axis=(0, 2, 3)))
            return grads

    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
        # (n, ho, wo, c_in*kh*kw)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, -1)
        out = (cols @ kmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

        def backward(g):
            gf = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
            gk = (gf.T @ cols).reshape(kd.shape) if kernel.requires_grad else None
            gx = None
            if x.requires_grad:
                gcols = (gf @ kmat).reshape(n, ho, wo, c_in, kh, kw)
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                            :, :, :, :, i, j
                        ].transpose(0, 3, 1, 2)
                gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            grads = [gx, gk]
            if bias is not None:
                grads.append(g.sum(axis=(0, 2, 3)))
            return grads

    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    y = _make(np.ascontiguousarray(out), parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange ``(..., C*r*r, H, W)`` into ``(..., C, H*r, W*r)``.

    Input channel ``c*r*r + i*r + j`` lands at output ``(c, h*r + i, w*r + j)``.
    """
    *lead, c, h, w = x.shape
    if c % (r * r) != 0:
        raise DimensionError(f"pixel_shuffle: channel count {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    lead = tuple(lead)
    nl = len(lead)
    y = reshape(x, lead + (co, r, r, h, w))
    axes = tuple(range(nl)) + tuple(nl + a for a in (0, 3, 1, 4, 2))
    y = transpose(y, axes)
    return reshape(y, lead + (co, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle` (space-to-depth)."""
    *lead, c, h, w = x.shape
    if h % r or w % r:
        raise DimensionError(f"pixel_unshuffle: spatial size {(h, w)} not divisible by r={r}")
    lead = tuple(lead)
    nl = len(lead)
    y = reshape(x, lead + (c, h // r, r, w // r, r))
    axes = tuple(range(nl)) + tuple(nl + a for a in (0, 2, 4, 1, 3))
    y = transpose(y, axes)
    return reshape(y, lead + (c * r * r, h // r, w // r))


# -- gradient checking ------------------------------------------------------------------
@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    nonfinite: bool = False
    worst: str = ""
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (not self.nonfinite) and self.max_rel_error < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:g} checked={self.n_checked} {self.worst}"


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, tol: float = 1e-4, h: float = 1e-5, **kw) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``f`` at ``point``."""
    point = Tensor(np.asarray(point.data if isinstance(point, Tensor) else point, dtype=np.float64), requires_grad=True)
    return grad_check_params(lambda: f(point), [("x", point)], tol=tol, h=h, **kw)


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Iterable[tuple[str, Tensor]] | Iterable[Tensor],
    tol: float = 1e-4,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Central-difference check of ``loss_fn`` w.r.t. named parameter tensors.

    The relative error of entry ``i`` is ``|a_i - n_i| / max(|a_i|, |n_i|, floor)``
    with ``floor = max(1e-3 * tensor max, 1e-5 * max over all tensors, 1e-12)``
    of ``max(|a|, |n|)``; the floor keeps round-off on exactly-zero gradients
    (e.g. biases a softmax is invariant to) from reading as relative error. With ``max_entries``,
    only that many randomly chosen entries per tensor are perturbed.
    """
    named = [(p if isinstance(p, tuple) else (f"p{i}", p)) for i, p in enumerate(params)]
    for _, p in named:
        p.grad = None
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        return GradCheckReport(float("inf"), tol, 0, nonfinite=True, worst="non-finite loss")
    loss.backward()
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, tol, 0)
    pairs = []
    for name, p in named:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            numeric[k] = (fp - fm) / (2 * h)
        pairs.append((name, analytic.reshape(-1)[idx], numeric))
    global_max = max((max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0)) for _, a, n in pairs), default=0.0)
    for name, a, numeric in pairs:
        if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(a))):
            report.nonfinite = True
            report.worst = f"non-finite gradient in {name}"
            continue
        local_max = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        floor = max(1e-3 * local_max, 1e-5 * global_max, 1e-12)
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        err = float(rel.max(initial=0.0))
        report.per_tensor[name] = err
        report.n_checked += len(a)
        if err > report.max_rel_error:
            report.max_rel_error = err
            report.worst = f"worst={name}"
    for _, p in named:
        p.grad = None
    return report
