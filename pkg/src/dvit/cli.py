"""Command-line surface: ``dvit {gen-data,train,eval,ablate,gradcheck,export-ced}``.

Every subcommand accepts ``--seed``, ``--config`` (a ``key=value`` file) and
``--out``. Settings resolve as preset, then config file, then ``--set k=v``
overrides, then ``--seed``. Results go to stdout as ``key=value`` lines or
comma-delimited tables; figures are written under ``--out``.

Numerics are pinned to one BLAS thread so runs are bitwise reproducible.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError
from .config import CascadeConfig, ConfigError, PRESETS, preset
from .data import DatasetError, generate_dataset
from .metrics import ced_export, evaluate_errors

EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT, EXIT_FAILED = 2, 3, 4, 1


def _csv_list(cast):
    def parse(text: str):
        return [cast(v) for v in text.split(",") if v.strip()]

    return parse


def resolve_config(args) -> CascadeConfig:
    cfg = preset(args.preset)
    if args.config:
        cfg = CascadeConfig.load(args.config, base=cfg)
    if args.set:
        cfg = cfg.with_overrides(args.set)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    cfg.validate()
    return cfg


def _emit(pairs: dict) -> None:
    for k, v in pairs.items():
        print(f"{k}={v:.9g}" if isinstance(v, float) else f"{k}={v}")


# -- subcommands --------------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out or "data")
    tr, te = generate_dataset(out, args.n, cfg.resolution, cfg.landmarks, cfg.seed)
    _emit({"dataset": out, "train": tr.count, "test": te.count, "resolution": cfg.resolution, "landmarks": cfg.landmarks, "seed": cfg.seed})
    return 0


def cmd_train(args) -> int:
    from .train import train

    cfg = resolve_config(args)
    out = Path(args.out or "run")
    t0 = time.perf_counter()
    result = train(cfg, args.data, out, resume=args.resume, max_train=args.max_train)
    first, last = result.history[0][-1], result.history[-1][-1]
    _emit(
        {
            "out": out,
            "params": result.n_params,
            "epochs": int(result.history[-1][0]),
            "initial_loss": first,
            "final_loss": last,
            "loss_ratio": last / first,
            "nme": result.report.nme,
            "fr": result.report.fr,
            "auc": result.report.auc,
            "checkpoint": result.checkpoint,
            "wall_time": time.perf_counter() - t0,
        }
    )
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate

    cfg = resolve_config(args) if (args.config or args.set) else None
    out = Path(args.out or "eval")
    report = evaluate(args.checkpoint, args.data, t=args.t, out_dir=out, cfg=cfg, split=args.split)
    _emit({**report.as_row(), "threshold": report.threshold, "ced": out / "ced.csv", "figure": out / "ced.png"})
    return 0


def cmd_ablate(args) -> int:
    from .train import ABLATION_COLUMNS, ablate

    cfg = resolve_config(args)
    grid = {"block_kind": args.block_kinds, "connection": args.connections, "blocks": args.blocks, "w": args.w}
    out = Path(args.out or "ablation")
    rows = ablate(cfg, grid, args.data, out, max_train=args.max_train)
    print(",".join(ABLATION_COLUMNS))
    for r in rows:
        print(",".join(f"{r[c]:.9g}" if isinstance(r[c], float) else str(r[c]) for c in ABLATION_COLUMNS))
    return 0 if all(r["status"] == "ok" for r in rows) else EXIT_FAILED


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    t0 = time.perf_counter()
    results = run_suite(args.seed or 0, max_entries=args.max_entries)
    lines = [f"{name:<28s} {rep}" for name, rep in results.items()]
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in results.values())
    lines.append(f"{'suite':<28s} {'PASS' if ok else 'FAIL'} checks={len(results)} runtime={elapsed:.1f}s")
    print("\n".join(lines))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0 if ok else EXIT_FAILED


def cmd_export_ced(args) -> int:
    from .plotting import plot_ced

    rows = Path(args.errors).read_text(encoding="utf-8").splitlines()
    if not rows or rows[0].strip() != "id,nme":
        raise DatasetError(f"{args.errors}: expected a per-sample table with header 'id,nme'")
    errors = np.array([float(line.split(",")[1]) for line in rows[1:] if line.strip()])
    out = Path(args.out or "ced")
    out.mkdir(parents=True, exist_ok=True)
    ced_export(errors, out / "ced.csv")
    plot_ced(errors, out / "ced.png", threshold=args.t)
    report = evaluate_errors(errors, args.t)
    _emit({**report.as_row(), "threshold": args.t, "ced": out / "ced.csv", "figure": out / "ced.png"})
    return 0


# -- parser ---------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--config", type=Path, default=None, help="key=value config file")
    common.add_argument("--out", type=Path, default=None, help="output file or directory")
    common.add_argument("--preset", default="desk", choices=sorted(PRESETS), help="base settings before --config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dvit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic train/test dataset")
    g.add_argument("--n", type=int, default=1024, help="samples generated before the even/odd split")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a cascade and checkpoint it")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    t.add_argument("--max-train", type=int, default=None, help="use only the first N training samples")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint, write CED table and figure")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--t", type=float, default=10.0, help="failure threshold in NME percent")
    e.add_argument("--split", default="test")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common], help="train every cell of a configuration grid")
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--block-kinds", type=_csv_list(str), default=["spatial", "channel", "dvit"])
    a.add_argument("--connections", type=_csv_list(str), default=["LSC", "ResCBSP", "DenC"])
    a.add_argument("--blocks", type=_csv_list(int), default=[2, 4, 6, 8])
    a.add_argument("--w", type=_csv_list(float), default=[1.0, 1.2, 1.4, 1.6])
    a.add_argument("--max-train", type=int, default=None)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    c.add_argument("--max-entries", type=int, default=8, help="entries sampled per parameter tensor")
    c.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-ced", parents=[common], help="CED table and figure from per_sample.csv")
    x.add_argument("--errors", type=Path, required=True, help="per_sample.csv written by eval")
    x.add_argument("--t", type=float, default=10.0)
    x.set_defaults(func=cmd_export_ced)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=1):
            return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DatasetError, OSError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
