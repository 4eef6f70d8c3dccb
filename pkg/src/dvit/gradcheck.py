"""Finite-difference gradient suite over every differentiable piece of the model (float64)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .attention import AttentionParams, EncoderBlockParams, multi_head_attention, scaled_dot_attention
from .cascade import build_model
from .config import preset
from .dual_vit import ChannelSplitViT, PredictionBlock, ResidualConvBlock, SpatialSplitViT, SupervisionHead, dvit_fuse
from .heatmap import encode_gaussian, normalize_heatmap, soft_argmax
from .losses import LossConfig, adaptive_wing, smooth_l1, stage_loss, total_loss
from .numerics import GradCheckReport, Tensor, grad_check, grad_check_params

TOL = 1e-4


def _rand(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _weighted(rng, shape) -> Callable[[Tensor], Tensor]:
    """Random linear functional so every output entry contributes to the checked scalar."""
    c = Tensor(rng.normal(size=shape))
    return lambda y: (y * c).sum()


def primitive_checks(seed: int) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    out = {}
    n, k, m = rng.integers(1, 5, size=3)
    a, b = _rand(rng, 2, n, k), _rand(rng, k, m)
    wm = _weighted(rng, (2, n, m))
    out["matmul/a"] = grad_check(lambda x: wm(nx.matmul(x, b)), a, TOL)
    out["matmul/b"] = grad_check(lambda x: (nx.matmul(a, x) ** 2).sum(), b, TOL)
    x = _rand(rng, 3, int(rng.integers(2, 6)))
    out["softmax"] = grad_check(lambda t: (nx.softmax(t, axis=-1) ** 2).sum(), x, TOL)
    wg = _weighted(rng, x.shape)
    out["gelu"] = grad_check(lambda t: wg(nx.gelu(t)), x, TOL)
    out["exp_log"] = grad_check(lambda t: nx.log(nx.exp(t) + 1.0).sum(), x, TOL)
    # d=2 saturates layer norm to +-gain; its eps-sized gradient is below finite-difference round-off
    d = int(rng.integers(3, 7))
    gain, bias = _rand(rng, d), _rand(rng, d)
    xl = _rand(rng, 3, d)
    wl = _weighted(rng, (3, d))
    out["layer_norm/x"] = grad_check(lambda t: wl(nx.layer_norm(t, gain, bias)), xl, TOL)
    out["layer_norm/gain"] = grad_check(lambda t: wl(nx.layer_norm(xl, t, bias)), gain, TOL)
    c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    ks, stride, pad = int(rng.choice([1, 3])), int(rng.integers(1, 3)), int(rng.integers(0, 2))
    hw = int(rng.integers(ks, 7))
    xi = _rand(rng, 2, c_in, hw, hw)
    ker = _rand(rng, c_out, c_in, ks, ks)
    bb = _rand(rng, c_out)
    ho = (hw + 2 * pad - ks) // stride + 1
    wc = _weighted(rng, (2, c_out, ho, ho))
    out["conv2d/x"] = grad_check(lambda t: wc(nx.conv2d(t, ker, bb, stride, pad)), xi, TOL)
    out["conv2d/kernel"] = grad_check(lambda t: wc(nx.conv2d(xi, t, bb, stride, pad)), ker, TOL)
    out["conv2d/bias"] = grad_check(lambda t: wc(nx.conv2d(xi, ker, t, stride, pad)), bb, TOL)
    r = int(rng.integers(1, 4))
    xs = _rand(rng, 4 * r * r, 2, 3)
    wp = _weighted(rng, (4, 2 * r, 3 * r))
    out["pixel_shuffle"] = grad_check(lambda t: wp(nx.pixel_shuffle(t, r)), xs, TOL)
    length, dd = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    q, kk, v = _rand(rng, length, dd), _rand(rng, length, dd), _rand(rng, length, dd)
    wa = _weighted(rng, (length, dd))
    out["attention/q"] = grad_check(lambda t: wa(scaled_dot_attention(t, kk, v)), q, TOL)
    out["attention/k"] = grad_check(lambda t: wa(scaled_dot_attention(q, t, v)), kk, TOL)
    out["attention/v"] = grad_check(lambda t: wa(scaled_dot_attention(q, kk, t)), v, TOL)
    return out


def module_checks(seed: int, max_entries: int | None = 12) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    out = {}

    def check(name, module, fn):
        out[name] = grad_check_params(fn, list(module.named_parameters()), TOL, max_entries=max_entries, seed=seed)

    x = Tensor(rng.normal(size=(5, 8)))
    mha = AttentionParams(8, 2, rng)
    w = _weighted(rng, (5, 8))
    check("multi_head_attention", mha, lambda: w(multi_head_attention(x, mha)))
    enc = EncoderBlockParams(8, 2, rng, mlp_ratio=2)
    check("encoder_block", enc, lambda: w(enc(x)))

    fm = Tensor(rng.normal(size=(8, 8, 8)))
    sp = SpatialSplitViT(8, 8, 8, 4, 8, 1, 2, rng, mlp_ratio=2)
    ch = ChannelSplitViT(8, 8, 8, 8, 1, 2, rng, mlp_ratio=2)
    ws, wc = _weighted(rng, (4, 8, 8)), _weighted(rng, (2, 8, 8))
    check("spatial_split_vit", sp, lambda: ws(sp(fm)))
    check("channel_split_vit", ch, lambda: wc(ch(fm)))
    xs = _rand(rng, 4, 8, 8)
    xc = _rand(rng, 2, 8, 8)
    fuse = ResidualConvBlock(6, 8, rng)
    wf = _weighted(rng, (8, 8, 8))
    check("dvit_fuse", fuse, lambda: wf(dvit_fuse(xs, xc, fuse)))
    out["dvit_fuse/inputs"] = grad_check_params(lambda: wf(dvit_fuse(xs, xc, fuse)), [("spatial", xs), ("channel", xc)], TOL)
    head = SupervisionHead(8, 3, rng)
    wh = _weighted(rng, (3, 8, 8))
    check("supervision_head", head, lambda: wh(head(fm)))

    cfg = preset("toy")
    blk = PredictionBlock(cfg, rng)
    wb1, wb2 = _weighted(rng, (8, 8, 8)), _weighted(rng, (3, 8, 8))

    def block_scalar():
        f, h = blk(fm)
        return wb1(f) + wb2(h)

    check("prediction_block", blk, block_scalar)

    logits = _rand(rng, 3, 5, 6)
    wm = _weighted(rng, (3, 2))
    out["soft_argmax"] = grad_check(lambda t: wm(soft_argmax(normalize_heatmap(t))), logits, TOL)
    y = rng.uniform(0.5, 4.0, size=(3, 2))
    mu = _rand(rng, 3, 2, scale=2.0)
    out["smooth_l1"] = grad_check(lambda t: smooth_l1(t + 2.0, y, 1.0), mu, TOL)
    z = encode_gaussian(y, 5, 6, 1.5)
    hp = Tensor(z + rng.uniform(-0.4, 0.4, size=z.shape), requires_grad=True)
    out["adaptive_wing"] = grad_check(lambda t: adaptive_wing(t, z), hp, TOL)

    # stage loss on a two-landmark toy, differentiated through the decoder
    y2 = rng.uniform(1.0, 4.0, size=(2, 2))
    z2 = encode_gaussian(y2, 6, 6, 1.5)
    lg = _rand(rng, 2, 6, 6)
    lcfg = LossConfig()

    def stage(t):
        h = normalize_heatmap(t)
        return stage_loss(soft_argmax(h), y2, h, z2, lcfg).total

    out["stage_loss"] = grad_check(stage, lg, TOL)
    return out


def objective_check(connection: str = "LSC", seed: int = 0, max_entries: int | None = 8) -> GradCheckReport:
    """Full cascaded objective on the (B=2, C=8, H=W=8, M=3) toy w.r.t. every parameter tensor."""
    cfg = preset("toy", connection=connection, seed=seed)
    model = build_model(cfg)
    rng = np.random.default_rng(seed + 1)
    image = Tensor(rng.uniform(0, 1, size=(2, 3, cfg.resolution, cfg.resolution)))
    y = rng.uniform(1.0, cfg.height - 2.0, size=(2, cfg.landmarks, 2))
    z = encode_gaussian(y, cfg.height, cfg.width, cfg.sigma)
    lcfg = LossConfig.from_config(cfg)

    def objective():
        out = model(image)
        stages = []
        for hm in out.heatmaps:
            h = normalize_heatmap(hm)
            stages.append(stage_loss(soft_argmax(h), y, h, z, lcfg).total)
        return total_loss(stages, cfg.w)

    return grad_check_params(objective, list(model.named_parameters()), TOL, max_entries=max_entries, seed=seed)


def run_suite(seed: int = 0, max_entries: int | None = 8) -> dict[str, GradCheckReport]:
    results = {}
    results.update(primitive_checks(seed))
    results.update(module_checks(seed))
    for conn in ("LSC", "ResCBSP", "DenC"):
        results[f"objective/{conn}"] = objective_check(conn, seed, max_entries)
    return results
