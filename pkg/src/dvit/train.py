"""Adam, the learning-rate schedule, training, evaluation and the ablation harness.

Training log (``train_log.tsv``), one line per epoch after a ``#`` header::

    epoch  lr  loss_1 ... loss_B  total

Epoch 0 is the training-set loss at initialization; epochs ``1..E`` are the
means over that epoch's optimization steps. ``steps.tsv`` has the same
columns per step (``step`` first). Wall-clock times go to the logger only,
so logs are bitwise reproducible.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .cascade import Cascade, build_model
from .checkpoint import ConfigHashMismatch, TrainState, checkpoint_load, checkpoint_save
from .config import CascadeConfig, ConfigError
from .data import AugmentRecipe, DatasetError, Sample, augment, load_dataset
from .heatmap import decode, encode_gaussian, heatmap_to_image, image_to_heatmap, normalize_heatmap, soft_argmax
from .layers import count_parameters
from .losses import LossConfig, stage_loss, stage_weights, total_loss
from .metrics import EvalReport, ced_export, evaluate_errors, per_sample_nme
from .numerics import Tensor

log = logging.getLogger(__name__)


# -- optimizer ------------------------------------------------------------------------
def lr_schedule(epoch: int, initial_lr: float = 1e-4, period: int = 200) -> float:
    """Halve the learning rate every ``period`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return initial_lr * 0.5 ** (epoch // period)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """In-place bias-corrected Adam update of ``param`` at step ``t`` (1-based)."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    param -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype, copy=False)


class Adam:
    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}
        self.t = 0
        self.skipped = 0

    def step(self, lr: float) -> bool:
        """Apply one update from the accumulated ``.grad``; returns False (and skips) on non-finite grads."""
        grads = {n: (np.zeros_like(p.data) if p.grad is None else p.grad) for n, p in self.named}
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            log.warning("non-finite gradient at step %d; update skipped", self.t + 1)
            return False
        self.t += 1
        for n, p in self.named:
            adam_step(p.data, grads[n], self.m[n], self.v[n], self.t, lr, self.beta1, self.beta2, self.eps)
        return True

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None


# -- batching -------------------------------------------------------------------------
@dataclass
class Batch:
    images: np.ndarray
    y_img: np.ndarray  # (N, M, 2) image pixels
    y_hm: np.ndarray  # (N, M, 2) heatmap pixels
    z: np.ndarray  # (N, M, H, W)
    ids: list[int]


def make_batch(samples: list[Sample], cfg: CascadeConfig, dtype) -> Batch:
    images = np.stack([s.image for s in samples]).astype(dtype)
    y_img = np.stack([s.landmarks for s in samples])
    y_hm = image_to_heatmap(y_img, cfg.resolution, cfg.height)
    z = encode_gaussian(y_hm, cfg.height, cfg.width, cfg.sigma)
    return Batch(images, y_img, y_hm, z, [s.id for s in samples])


def cascade_losses(model: Cascade, batch: Batch, lcfg: LossConfig):
    """Per-stage loss reports, total objective, and the final-stage decoded landmarks (heatmap px)."""
    cfg = model.cfg
    out = model(Tensor(batch.images))
    reports = []
    mu = None
    for hm in out.heatmaps:
        h = normalize_heatmap(hm, cfg.temperature, cfg.normalizer)
        mu = soft_argmax(h, check=False)
        reports.append(stage_loss(mu, batch.y_hm, h, batch.z, lcfg))
    total = total_loss([r.total for r in reports], lcfg.w)
    return reports, total, mu


def predict(model: Cascade, samples: list[Sample], batch_size: int = 32) -> np.ndarray:
    """Final-stage soft-argmax landmarks in image pixels, ``(N, M, 2)``."""
    cfg = model.cfg
    preds = []
    with nx.no_grad():
        for i in range(0, len(samples), batch_size):
            imgs = np.stack([s.image for s in samples[i : i + batch_size]]).astype(cfg.dtype)
            hm = model(Tensor(imgs)).heatmaps[-1]
            preds.append(heatmap_to_image(decode(hm, cfg.temperature, cfg.normalizer).data, cfg.resolution, cfg.height))
    if not preds:
        return np.zeros((0, cfg.landmarks, 2))
    return np.concatenate(preds).astype(np.float64)


def evaluate_predictions(preds, gts, pair=(0, 1), t: float = 10.0) -> tuple[EvalReport, np.ndarray]:
    errors = per_sample_nme(preds, gts, pair)
    return evaluate_errors(errors, t), errors


def _fmt(x: float) -> str:
    return f"{x:.10g}"


# -- training --------------------------------------------------------------------------
def _load_split(dataset_dir: Path, split: str, cfg: CascadeConfig) -> list[Sample]:
    samples, manifest = load_dataset(dataset_dir / split)
    if manifest.count and (manifest.resolution != cfg.resolution or manifest.landmarks != cfg.landmarks):
        raise ConfigError(
            f"{dataset_dir / split}: dataset is R={manifest.resolution}, M={manifest.landmarks}; "
            f"config wants R={cfg.resolution}, M={cfg.landmarks}"
        )
    return samples


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 7919, int(epoch)])).permutation(n)


def state_from(model: Cascade, opt: Adam, cfg: CascadeConfig, epoch: int, lr: float, best: float) -> TrainState:
    return TrainState(
        params={n: p.data.copy() for n, p in model.named_parameters()},
        m={n: a.copy() for n, a in opt.m.items()},
        v={n: a.copy() for n, a in opt.v.items()},
        step=opt.t,
        epoch=epoch,
        lr=lr,
        seed=cfg.seed,
        config_hash=cfg.hash(),
        config_text=cfg.to_text(),
        best_nme=best,
    )


def restore(state: TrainState, model: Cascade, opt: Adam | None = None) -> None:
    model.load_state_dict(state.params)
    if opt is not None:
        for n in opt.m:
            opt.m[n] = state.m[n].copy()
            opt.v[n] = state.v[n].copy()
        opt.t = state.step


def model_from_checkpoint(state: TrainState) -> Cascade:
    cfg = CascadeConfig.from_text(state.config_text)
    model = build_model(cfg)
    restore(state, model)
    return model


@dataclass
class TrainResult:
    report: EvalReport
    history: list[list[float]] = field(default_factory=list)
    checkpoint: Path | None = None
    n_params: int = 0


def train(cfg: CascadeConfig, dataset_dir, out_dir, resume: str | Path | None = None, max_train: int | None = None) -> TrainResult:
    dataset_dir, out_dir = Path(dataset_dir), Path(out_dir)
    train_set = _load_split(dataset_dir, "train", cfg)
    test_set = _load_split(dataset_dir, "test", cfg)
    if max_train is not None:
        train_set = train_set[:max_train]
    if not train_set:
        raise DatasetError(f"{dataset_dir / 'train'}: no training samples")
    recipe = AugmentRecipe.parse(cfg.augment)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.txt")
    dtype = np.dtype(cfg.dtype)
    lcfg = LossConfig.from_config(cfg)
    model = build_model(cfg)
    opt = Adam(model.named_parameters())
    n_params, _ = count_parameters(model)
    b = cfg.blocks
    header = "\t".join(["# epoch", "lr"] + [f"loss_{j + 1}" for j in range(b)] + ["total"])
    log_path, step_path = out_dir / "train_log.tsv", out_dir / "steps.tsv"

    start_epoch, best = 0, float("inf")
    history: list[list[float]] = []
    if resume is not None:
        state = checkpoint_load(resume, expected_hash=cfg.hash())
        restore(state, model, opt)
        start_epoch, best = state.epoch, state.best_nme
        history = _read_log(log_path, upto=start_epoch)
        _write_log(log_path, header, history)
        _truncate_steps(step_path, state.step)
    else:
        with nx.no_grad():
            init = _dataset_loss(model, train_set, cfg, lcfg, dtype)
        history = [[0, lr_schedule(0, cfg.lr, cfg.lr_period)] + init]
        _write_log(log_path, header, history)
        step_path.write_text("\t".join(["# step", "epoch", "lr"] + [f"loss_{j + 1}" for j in range(b)] + ["total"]) + "\n")

    ckpt = None
    steps_fh = open(step_path, "a", encoding="utf-8")
    try:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.perf_counter()
            lr = lr_schedule(epoch, cfg.lr, cfg.lr_period)
            order = epoch_order(cfg.seed, epoch, len(train_set))
            sums = np.zeros(b + 1)
            n_batches = 0
            for i in range(0, len(order), cfg.batch_size):
                chosen = [train_set[k] for k in order[i : i + cfg.batch_size]]
                aug_seed = cfg.seed * 1_000_003 + epoch
                batch = make_batch([augment(s, recipe, aug_seed) for s in chosen], cfg, dtype)
                reports, total, _ = cascade_losses(model, batch, lcfg)
                opt.zero_grad()
                total.backward()
                opt.step(lr)
                row = [float(r.total.data) for r in reports] + [float(total.data)]
                sums += row
                n_batches += 1
                steps_fh.write("\t".join([str(opt.t), str(epoch + 1), _fmt(lr)] + [_fmt(v) for v in row]) + "\n")
            means = (sums / max(n_batches, 1)).tolist()
            history.append([epoch + 1, lr] + means)
            _write_log(log_path, header, history)
            log.info("epoch %d lr %.3g total %.5f (%.1fs)", epoch + 1, lr, means[-1], time.perf_counter() - t0)
            last = epoch + 1 == cfg.epochs
            if (epoch + 1) % cfg.checkpoint_every == 0 or last:
                steps_fh.flush()
                nme_now = float("nan")
                if test_set:
                    rep, _ = evaluate_predictions(predict(model, test_set), np.stack([s.landmarks for s in test_set]), cfg.eye_indices, cfg.nme_threshold)
                    nme_now = rep.nme
                    log.info("epoch %d test NME %.3f%%", epoch + 1, nme_now)
                improved = nme_now < best
                best = min(best, nme_now) if not math.isnan(nme_now) else best
                state = state_from(model, opt, cfg, epoch + 1, lr, best)
                ckpt = checkpoint_save(state, out_dir / f"ckpt_epoch{epoch + 1:04d}.bin")
                checkpoint_save(state, out_dir / "last.bin")
                if improved:
                    checkpoint_save(state, out_dir / "best.bin")
    finally:
        steps_fh.close()

    if ckpt is None:
        ckpt = checkpoint_save(state_from(model, opt, cfg, cfg.epochs, lr_schedule(cfg.epochs, cfg.lr, cfg.lr_period), best), out_dir / "last.bin")
    if test_set:
        report, errors = evaluate_predictions(predict(model, test_set), np.stack([s.landmarks for s in test_set]), cfg.eye_indices, cfg.nme_threshold)
    else:
        report, errors = EvalReport(float("nan"), 0.0, 0.0, cfg.nme_threshold), np.zeros(0)
    return TrainResult(report, history, ckpt, n_params)


def _dataset_loss(model, samples, cfg, lcfg, dtype, batch_size: int = 32) -> list[float]:
    sums = np.zeros(cfg.blocks + 1)
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        reports, total, _ = cascade_losses(model, make_batch(chunk, cfg, dtype), lcfg)
        sums += np.array([float(r.total.data) for r in reports] + [float(total.data)]) * len(chunk)
    return (sums / len(samples)).tolist()


def _write_log(path: Path, header: str, history: list[list[float]]) -> None:
    lines = [header]
    for row in history:
        lines.append("\t".join([str(int(row[0]))] + [_fmt(v) for v in row[1:]]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_log(path: str | Path) -> list[list[float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or not line.strip():
            continue
        rows.append([float(v) for v in line.split("\t")])
    return rows


def _read_log(path: Path, upto: int) -> list[list[float]]:
    if not path.exists():
        return []
    return [r for r in read_log(path) if r[0] <= upto]


def _truncate_steps(path: Path, upto_step: int) -> None:
    if not path.exists():
        return
    keep = [l for l in path.read_text(encoding="utf-8").splitlines() if l.startswith("#") or int(l.split("\t")[0]) <= upto_step]
    path.write_text("\n".join(keep) + "\n", encoding="utf-8")


# -- evaluation --------------------------------------------------------------------------
def evaluate(checkpoint, dataset_dir, t: float = 10.0, out_dir=None, cfg: CascadeConfig | None = None, split: str = "test") -> EvalReport:
    """Decode final-stage heatmaps of ``split``, report NME/FR/AUC, write CED table and figure."""
    state = checkpoint_load(checkpoint, expected_hash=cfg.hash() if cfg is not None else None)
    model = model_from_checkpoint(state)
    mcfg = model.cfg
    if state.config_hash != mcfg.hash():
        raise ConfigHashMismatch(f"{checkpoint}: stored config does not reproduce the stored hash")
    samples = _load_split(Path(dataset_dir), split, mcfg)
    if not samples:
        raise DatasetError(f"{Path(dataset_dir) / split}: no samples to evaluate")
    preds = predict(model, samples)
    gts = np.stack([s.landmarks for s in samples])
    report, errors = evaluate_predictions(preds, gts, mcfg.eye_indices, t)
    if out_dir is not None:
        write_eval_outputs(Path(out_dir), report, errors, [s.id for s in samples])
    return report


def write_eval_outputs(out_dir: Path, report: EvalReport, errors: np.ndarray, ids: list[int]) -> None:
    from .plotting import plot_ced

    out_dir.mkdir(parents=True, exist_ok=True)
    ced_export(errors, out_dir / "ced.csv")
    lines = ["id,nme"] + [f"{i},{e:.9g}" for i, e in zip(ids, errors)]
    (out_dir / "per_sample.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "eval.txt").write_text(
        f"nme={report.nme:.9g}\nfr={report.fr:.9g}\nauc={report.auc:.9g}\nthreshold={report.threshold:g}\ncount={len(errors)}\n",
        encoding="utf-8",
    )
    plot_ced(errors, out_dir / "ced.png", threshold=report.threshold)


# -- ablation --------------------------------------------------------------------------------
ABLATION_AXES = ("block_kind", "connection", "blocks", "w")
ABLATION_COLUMNS = ["cell", "block_kind", "connection", "blocks", "w", "nme", "fr", "auc", "params", "wall_time", "status"]


def expand_grid(grid: dict[str, list]) -> list[dict]:
    keys = [k for k in ABLATION_AXES if k in grid] + [k for k in grid if k not in ABLATION_AXES]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cell_id(cell: dict) -> str:
    return "_".join(f"{k}-{v}" for k, v in cell.items())


def ablate(base: CascadeConfig, grid: dict[str, list], dataset_dir, out_dir, max_train: int | None = None) -> list[dict]:
    """Train and evaluate every grid cell with the same seed, data order and budget.

    Writes ``ablation.csv`` (columns ``ABLATION_COLUMNS``) plus figures; a
    failing cell gets ``status=error: ...`` and the sweep continues.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell in expand_grid(grid):
        cid = cell_id(cell)
        row = {"cell": cid, **{k: cell.get(k, getattr(base, k)) for k in ABLATION_AXES}}
        t0 = time.perf_counter()
        try:
            cfg = base.replace(**cell)
            result = train(cfg, dataset_dir, out_dir / "cells" / cid, max_train=max_train)
            row.update(nme=result.report.nme, fr=result.report.fr, auc=result.report.auc, params=result.n_params, status="ok")
        except Exception as exc:  # noqa: BLE001 - harness records and moves on
            log.exception("ablation cell %s failed", cid)
            row.update(nme=float("nan"), fr=float("nan"), auc=float("nan"), params=0, status=f"error: {exc}".replace(",", ";"))
        row["wall_time"] = time.perf_counter() - t0
        rows.append(row)
        write_table(rows, out_dir / "ablation.csv")
    try:
        from .plotting import plot_ablation

        plot_ablation(rows, out_dir)
    except Exception:  # noqa: BLE001 - figures are best effort; table already written
        log.exception("could not render ablation figures")
    return rows


def write_table(rows: list[dict], path: Path) -> None:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.9g}"
        return str(v)

    lines = [",".join(ABLATION_COLUMNS)] + [",".join(cell(r[c]) for c in ABLATION_COLUMNS) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_table(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    cols = lines[0].split(",")
    return [dict(zip(cols, line.split(","))) for line in lines[1:]]


def stage_weighting_consistent(row: list[float], n_blocks: int, w: float, tol: float = 1e-6) -> bool:
    """Logged total equals the weighted sum of logged stage losses."""
    stages = np.array(row[2 : 2 + n_blocks])
    return abs(float(stage_weights(n_blocks, w) @ stages) - row[2 + n_blocks]) <= tol * max(1.0, abs(row[2 + n_blocks]))
