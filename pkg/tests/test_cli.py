import numpy as np
import pytest

from dvit.cli import EXIT_CHECKPOINT, EXIT_DATA, EXIT_USAGE, main
from dvit.metrics import ced_load


def _kv(out: str) -> dict:
    return dict(line.split("=", 1) for line in out.strip().splitlines() if "=" in line)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--preset", "toy", "--n", "12", "--out", str(d)]) == 0
    return d


def test_gen_train_eval_export(data_dir, tmp_path, capsys):
    capsys.readouterr()
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs=1\nbatch_size=4  # small\n")
    assert main(["train", "--preset", "toy", "--config", str(cfg), "--set", "lr=2e-3", "--data", str(data_dir), "--out", str(tmp_path / "run")]) == 0
    out = _kv(capsys.readouterr().out)
    assert out["epochs"] == "1" and float(out["loss_ratio"]) > 0
    assert "lr=0.002" in (tmp_path / "run" / "config.txt").read_text()

    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "last.bin"), "--data", str(data_dir), "--out", str(tmp_path / "ev")]) == 0
    ev = _kv(capsys.readouterr().out)
    assert (tmp_path / "ev" / "ced.png").exists()

    assert main(["export-ced", "--errors", str(tmp_path / "ev" / "per_sample.csv"), "--out", str(tmp_path / "ced")]) == 0
    ex = _kv(capsys.readouterr().out)
    assert float(ex["nme"]) == pytest.approx(float(ev["nme"]), rel=1e-8)
    assert len(ced_load(tmp_path / "ced" / "ced.csv")) == 6


def test_seed_flag_overrides_config(data_dir, tmp_path):
    assert main(["train", "--preset", "toy", "--seed", "7", "--set", "epochs=1", "--data", str(data_dir), "--out", str(tmp_path)]) == 0
    assert "seed=7" in (tmp_path / "config.txt").read_text().splitlines()


def test_ablate_prints_table(data_dir, tmp_path, capsys):
    capsys.readouterr()
    rc = main(["ablate", "--preset", "toy", "--set", "epochs=1", "--block-kinds", "dvit", "--connections", "LSC,DenC",
               "--blocks", "2", "--w", "1.0", "--data", str(data_dir), "--out", str(tmp_path)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("cell,") and len(lines) == 3


def test_gradcheck_command(tmp_path, capsys, monkeypatch):
    from dvit import gradcheck
    from dvit.numerics import GradCheckReport

    monkeypatch.setattr(gradcheck, "run_suite", lambda seed, max_entries: {"matmul": GradCheckReport(1e-7, 1e-4, 4)})
    assert main(["gradcheck", "--out", str(tmp_path / "g.txt")]) == 0
    assert "PASS" in capsys.readouterr().out and (tmp_path / "g.txt").exists()


def test_errors_map_to_exit_codes(tmp_path, capsys):
    assert main(["train", "--set", "nope=1", "--data", str(tmp_path)]) == EXIT_USAGE
    assert main(["train", "--preset", "toy", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    (tmp_path / "bad.bin").write_bytes(b"junk")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.bin"), "--data", str(tmp_path)]) == EXIT_CHECKPOINT
    assert "error:" in capsys.readouterr().err
