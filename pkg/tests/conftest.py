"""Session fixtures for the desk-scale acceptance experiments.

The pretraining and transfer runs are expensive, so they execute once per
session and every acceptance criterion reads from the shared artifacts.
"""

import json
import time

import pytest

from longspine.cli import main
from longspine.config import save_config
from longspine.metrics import MetricsReport
from longspine.presets import desk_pretrain_config, desk_transfer_config


@pytest.fixture(scope="session")
def desk_pretrain(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_pretrain")
    cfg = desk_pretrain_config()
    cfg_path = root / "config.txt"
    save_config(cfg, cfg_path)

    data_dir = root / "data"
    t0 = time.monotonic()
    assert main(["synth", "--config", str(cfg_path), "--out", str(data_dir)]) == 0
    out_dir = root / "run"
    assert (
        main([
            "pretrain", "--config", str(cfg_path),
            "--manifest", str(data_dir / "manifest.jsonl"), "--out", str(out_dir),
        ])
        == 0
    )
    elapsed = time.monotonic() - t0
    return {
        "config": cfg,
        "config_path": cfg_path,
        "manifest": data_dir / "manifest.jsonl",
        "checkpoint": out_dir / "checkpoint.lsckpt",
        "history": out_dir / "history.csv",
        "report": MetricsReport.load(out_dir / "verification.json"),
        "elapsed_s": elapsed,
    }


@pytest.fixture(scope="session")
def desk_transfer(tmp_path_factory, desk_pretrain):
    root = tmp_path_factory.mktemp("desk_transfer")
    cfg = desk_transfer_config()
    cfg_path = root / "config.txt"
    save_config(cfg, cfg_path)

    data_dir = root / "data"
    t0 = time.monotonic()
    assert main(["synth", "--config", str(cfg_path), "--out", str(data_dir)]) == 0
    out_dir = root / "run"
    assert (
        main([
            "curve", "--config", str(cfg_path),
            "--manifest", str(data_dir / "manifest.jsonl"),
            "--checkpoint", str(desk_pretrain["checkpoint"]),
            "--out", str(out_dir),
        ])
        == 0
    )
    elapsed = time.monotonic() - t0
    rows = json.loads((out_dir / "curve.json").read_text())
    return {
        "config": cfg,
        "rows": rows,
        "curve_csv": out_dir / "curve.csv",
        "elapsed_s": elapsed,
    }
