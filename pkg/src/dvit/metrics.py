"""NME, failure rate, AUC of the cumulative error distribution, and CED files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class EvalReport:
    nme: float
    fr: float
    auc: float
    threshold: float
    ced: list[float] = field(default_factory=list)

    def as_row(self) -> dict[str, float]:
        return {"nme": self.nme, "fr": self.fr, "auc": self.auc}


def nme(pred, gt, d_norm: float) -> float:
    """Mean landmark distance divided by ``d_norm``, in percent."""
    if not d_norm > 0:
        raise ValueError(f"normalization distance must be positive, got {d_norm}")
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean() / d_norm * 100.0)


def normalization_distance(gt, pair: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Distance between the two reference landmarks (interocular analogue); batched over leading axes."""
    gt = np.asarray(gt, dtype=np.float64)
    return np.linalg.norm(gt[..., pair[0], :] - gt[..., pair[1], :], axis=-1)


def per_sample_nme(preds, gts, pair: tuple[int, int] = (0, 1)) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    d = normalization_distance(gts, pair)
    return np.array([nme(p, g, dn) for p, g, dn in zip(preds, gts, d)])


def failure_rate(per_sample, t: float = 10.0) -> float:
    """Percent of samples with NME strictly above ``t``."""
    e = np.asarray(per_sample, dtype=np.float64)
    if e.size == 0:
        raise ValueError("failure_rate of an empty list")
    if t <= 0:
        raise ValueError("threshold must be positive")
    return float(np.count_nonzero(e > t) / e.size * 100.0)


def auc_ced(per_sample, t: float = 10.0) -> float:
    """Area under the empirical CDF of NME on ``[0, t]``, divided by ``t``.

    The CDF is a step function, so the integral is exact:
    ``mean(max(t - e, 0)) / t``.
    """
    e = np.asarray(per_sample, dtype=np.float64)
    if e.size == 0:
        raise ValueError("auc_ced of an empty list")
    if t <= 0:
        raise ValueError("threshold must be positive")
    return float(np.maximum(t - np.maximum(e, 0.0), 0.0).mean() / t)


def evaluate_errors(per_sample, t: float = 10.0) -> EvalReport:
    e = np.asarray(per_sample, dtype=np.float64)
    return EvalReport(float(e.mean()), failure_rate(e, t), auc_ced(e, t), t, sorted(e.tolist()))


CED_HEADER = "nme,fraction"


def ced_rows(per_sample) -> list[tuple[float, float]]:
    e = np.sort(np.asarray(per_sample, dtype=np.float64))
    n = len(e)
    return [(float(v), (i + 1) / n) for i, v in enumerate(e)]


def ced_export(per_sample, path: str | Path) -> Path:
    """Write sorted ``(nme, cumulative fraction)`` rows, 9 significant digits."""
    path = Path(path)
    lines = [CED_HEADER] + [f"{v:.9g},{f:.9g}" for v, f in ced_rows(per_sample)]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CED file {path}: {exc}") from exc
    return path


def ced_load(path: str | Path) -> list[tuple[float, float]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read CED file {path}: {exc}") from exc
    if not lines or lines[0] != CED_HEADER:
        raise ValueError(f"{path}: missing '{CED_HEADER}' header")
    rows = []
    for line in lines[1:]:
        a, b = line.split(",")
        rows.append((float(a), float(b)))
    return rows
