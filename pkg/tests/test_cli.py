import time
from pathlib import Path

import numpy as np
import pytest

from sam2b import cli
from sam2b.cli import (ABLATION_HEADER, CURVE_HEADER, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_TRAINING,
                       METRICS_HEADER, WEIGHTS_HEADER, main, read_csv)
from sam2b.errors import TrainingError
from sam2b.storage import load_dataset

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMOKE = str(CONFIGS / "smoke.ini")

SWEEP = """
# low, level flight along an arc of radius 100 m around the base station
[experiment]
seed = 3

[channel]
rician_K_dB = inf

[trajectory]
step = 0.5
duration = 60
waypoint_radius = 5
start = {start}
waypoints = {waypoints}

[schedule]
segments = 0.0 zero
"""


def header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return fh.readline().rstrip("\r\n").split(",")


@pytest.fixture(scope="module")
def smoke_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("smoke")
    assert main(["gen", "--config", SMOKE, "--out", str(d / "data.s2mb")]) == EXIT_OK
    return d / "data.s2mb"


def test_gen_writes_dataset_snapshot_and_manifest(smoke_data, capsys, tmp_path):
    ds = load_dataset(smoke_data)
    assert len(ds) == 8
    assert Path(str(smoke_data) + ".manifest.txt").exists()
    assert Path(str(smoke_data) + ".config.ini").read_text().startswith("[experiment]")
    assert main(["gen", "--config", SMOKE, "--out", str(tmp_path / "again.s2mb")]) == EXIT_OK
    assert (tmp_path / "again.s2mb").read_bytes() == smoke_data.read_bytes()
    out = capsys.readouterr().out
    assert "N=8 Q=32" in out and "label_histogram" in out


def test_seed_override_changes_dataset(smoke_data, tmp_path):
    assert main(["gen", "--config", SMOKE, "--seed", "9", "--out", str(tmp_path / "s9.s2mb")]) == EXIT_OK
    assert (tmp_path / "s9.s2mb").read_bytes() != smoke_data.read_bytes()


def test_azimuth_sweep_covers_most_beams(tmp_path):
    az = np.linspace(-1.25, 1.25, 11)
    pts = [f"{100 * np.cos(a):.3f}, {100 * np.sin(a):.3f}, 5" for a in az]
    cfg = tmp_path / "sweep.ini"
    cfg.write_text(SWEEP.format(start=pts[0], waypoints="; ".join(pts[1:])))
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "sweep.s2mb")]) == EXIT_OK
    hist = load_dataset(tmp_path / "sweep.s2mb").manifest["label_histogram"]
    assert sum(1 for c in hist if c) > 0.8 * len(hist)


def test_train_outputs(smoke_data, tmp_path):
    t0 = time.perf_counter()
    code = main(["train", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path)])
    assert code == EXIT_OK and time.perf_counter() - t0 < 10
    assert header(tmp_path / "metrics.csv") == METRICS_HEADER
    assert header(tmp_path / "curve.csv") == CURVE_HEADER
    assert len(read_csv(tmp_path / "curve.csv")) == 1
    assert b"\r\n" in (tmp_path / "metrics.csv").read_bytes()
    assert (tmp_path / "checkpoint.s2mc").exists() and (tmp_path / "config.ini").exists()
    assert "training sam2b" in (tmp_path / "run.log").read_text()

    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(tmp_path / "checkpoint.s2mc"), "--dataset", str(smoke_data),
                 "--out", str(ev)]) == EXIT_OK
    assert (ev / "metrics.csv").read_bytes() == (tmp_path / "metrics.csv").read_bytes()


def test_train_is_idempotent(smoke_data, tmp_path):
    for d in ("a", "b"):
        assert main(["train", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path / d)]) == 0
    for name in ("metrics.csv", "curve.csv", "checkpoint.s2mc", "config.ini"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_ablate_table(smoke_data, tmp_path):
    code = main(["ablate", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path),
                 "--variant", "sam2b,single_gps"])
    assert code == EXIT_OK
    assert header(tmp_path / "ablation.csv") == ABLATION_HEADER
    rows = read_csv(tmp_path / "ablation.csv")
    assert [r["variant"] for r in rows] == ["sam2b", "single_gps"]
    assert all(r["status"] == "ok" for r in rows)
    assert (tmp_path / "single_gps.s2mc").exists()


def test_ablate_keeps_going_after_a_failure(smoke_data, tmp_path, monkeypatch):
    real = cli.train

    def flaky(ds, cfg):
        if cfg.variant == "sam2b":
            raise TrainingError("loss became nan", epoch=0)
        return real(ds, cfg)

    monkeypatch.setattr(cli, "train", flaky)
    main(["ablate", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path),
          "--variant", "sam2b,fixed_weight"])
    rows = read_csv(tmp_path / "ablation.csv")
    assert rows[0]["status"] == "failed:TrainingError" and rows[0]["top1"] == ""
    assert rows[1]["status"] == "ok" and float(rows[1]["top1"]) >= 0


def test_inspect_weights(smoke_data, tmp_path):
    main(["train", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path)])
    code = main(["inspect-weights", "--checkpoint", str(tmp_path / "checkpoint.s2mc"),
                 "--dataset", str(smoke_data), "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert header(tmp_path / "weights.csv") == WEIGHTS_HEADER
    rows = read_csv(tmp_path / "weights.csv")
    assert len(rows) == 3  # test side of 8 samples
    for r in rows:
        assert abs(sum(float(r[f"w_{m}"]) for m in ("img", "gps", "hd", "pos")) - 1.0) < 1e-9


def test_inspect_weights_rejects_fixed_weight(smoke_data, tmp_path):
    main(["train", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path),
          "--variant", "fixed_weight"])
    code = main(["inspect-weights", "--checkpoint", str(tmp_path / "checkpoint.s2mc"),
                 "--dataset", str(smoke_data), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG


def test_exit_codes(smoke_data, tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nflavour = 1\n")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["gen", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "x")]) == EXIT_IO
    assert main(["train", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path),
                 "--variant", "quantum"]) == EXIT_CONFIG
    assert main(["train"]) == EXIT_CONFIG  # usage error

    broken = tmp_path / "broken.s2mb"
    raw = bytearray(smoke_data.read_bytes())
    raw[-5] ^= 0xFF
    broken.write_bytes(bytes(raw))
    assert main(["train", "--config", SMOKE, "--dataset", str(broken), "--out", str(tmp_path)]) == EXIT_IO

    def boom(ds, cfg):
        raise TrainingError("loss became nan in epoch 0", epoch=0)

    monkeypatch.setattr(cli, "train", boom)
    assert main(["train", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path / "t")]) \
        == EXIT_TRAINING
    assert "epoch 0" in capsys.readouterr().err
    assert "failed in epoch 0" in (tmp_path / "t" / "run.log").read_text()


def test_eval_rejects_variant_mismatch(smoke_data, tmp_path):
    main(["train", "--config", SMOKE, "--dataset", str(smoke_data), "--out", str(tmp_path)])
    code = main(["eval", "--checkpoint", str(tmp_path / "checkpoint.s2mc"), "--dataset", str(smoke_data),
                 "--out", str(tmp_path / "e"), "--variant", "no_bbox"])
    assert code == EXIT_IO
