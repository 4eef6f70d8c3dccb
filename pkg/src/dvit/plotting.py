"""Figures written next to the delimited reports (CED curve, ablation sweeps)."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.4),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "dvit",
}
CONNECTION_COLORS = {"LSC": "#c0392b", "ResCBSP": "#2e86c1", "DenC": "#27ae60"}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_ced(errors, path, threshold: float = 10.0) -> Path:
    e = np.sort(np.asarray(errors, dtype=np.float64))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if e.size:
            frac = np.arange(1, e.size + 1) / e.size
            ax.step(np.concatenate([[0.0], e]), np.concatenate([[0.0], frac]), where="post", color="k", lw=1.2)
            auc = np.maximum(threshold - e, 0).mean() / threshold
            ax.set_title(f"NME {e.mean():.2f}%  AUC$_{{{threshold:g}}}$ {auc:.3f}", fontsize=9)
        ax.axvline(threshold, color="0.6", ls="--", lw=0.8)
        ax.set_xlim(0, max(threshold * 1.2, float(e.max()) if e.size else threshold))
        ax.set_ylim(0, 1.0)
        ax.set_xlabel("NME (%)")
        ax.set_ylabel("fraction of samples")
        return _save(fig, path)


def _num(v) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def plot_ablation(rows: list[dict], out_dir) -> list[Path]:
    """Depth sweep per connection, w sweep, and block-kind comparison, from whatever axes vary."""
    out_dir = Path(out_dir)
    paths = []
    ok = [r for r in rows if str(r.get("status", "ok")) == "ok"]
    if not ok:
        return paths

    def mean_by(key_fn):
        acc = defaultdict(list)
        for r in ok:
            acc[key_fn(r)].append(_num(r["nme"]))
        return {k: float(np.nanmean(v)) for k, v in acc.items()}

    with plt.rc_context(STYLE):
        depth = mean_by(lambda r: (r["connection"], int(r["blocks"])))
        if len({b for _, b in depth}) > 1:
            fig, ax = plt.subplots()
            for conn in sorted({c for c, _ in depth}):
                pts = sorted((b, v) for (c, b), v in depth.items() if c == conn)
                ax.plot(*zip(*pts), marker="o", ms=3.5, label=conn, color=CONNECTION_COLORS.get(conn))
            ax.set_xlabel("prediction blocks")
            ax.set_ylabel("NME (%)")
            ax.legend(frameon=False)
            paths.append(_save(fig, out_dir / "nme_vs_blocks.png"))

        wsweep = mean_by(lambda r: float(r["w"]))
        if len(wsweep) > 1:
            fig, ax = plt.subplots()
            ws = sorted(wsweep)
            ax.plot(ws, [wsweep[w] for w in ws], marker="s", ms=3.5, color="k")
            ax.set_xlabel("expanding factor w")
            ax.set_ylabel("NME (%)")
            paths.append(_save(fig, out_dir / "nme_vs_w.png"))

        kinds = mean_by(lambda r: r["block_kind"])
        if len(kinds) > 1:
            fig, ax = plt.subplots()
            names = [k for k in ("spatial", "channel", "dvit") if k in kinds]
            ax.bar(names, [kinds[k] for k in names], color=["0.65", "0.45", "#c0392b"][: len(names)])
            ax.set_ylabel("NME (%)")
            paths.append(_save(fig, out_dir / "nme_by_block_kind.png"))
    return paths
