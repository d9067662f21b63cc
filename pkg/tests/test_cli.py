"""End-to-end command-line runs on tiny smoke configurations."""

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from longspine.checkpoint import load_checkpoint
from longspine.cli import main
from longspine.config import ExperimentConfig, Seeds, save_config
from longspine.dataio import read_manifest
from longspine.metrics import MetricsReport


def smoke_config(**generator_overrides):
    cfg = ExperimentConfig(seeds=Seeds(41, 42, 43, 44), split_ratios=(0.5, 0.25, 0.25))
    gen_kwargs = dict(subjects=8, followup_fraction=1.0)
    gen_kwargs.update(generator_overrides)
    gen = dataclasses.replace(cfg.generator, **gen_kwargs)
    siamese = dataclasses.replace(
        cfg.siamese, lr=1e-4, batch_size=8, max_epochs=5, plateau_patience=3,
        augment_enabled=False, dtype="float64",
    )
    classifier = dataclasses.replace(
        cfg.classifier, lr=1e-3, batch_size=32, max_epochs=3, plateau_patience=2,
    )
    return dataclasses.replace(
        cfg, generator=gen, siamese=siamese, classifier=classifier,
        grading_ratios=(0.6, 0.15, 0.25), curve_repetitions=1,
    )


@pytest.fixture(scope="module")
def smoke_dirs(tmp_path_factory):
    """Shared CLI artifacts: an all-followup cohort for pretraining and a
    mostly-single-scan graded cohort for the transfer commands."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.txt"
    save_config(smoke_config(), cfg_path)
    graded_cfg_path = root / "cfg_graded.txt"
    save_config(smoke_config(subjects=12, followup_fraction=0.25), graded_cfg_path)

    data_dir = root / "data"
    assert main(["synth", "--config", str(cfg_path), "--out", str(data_dir)]) == 0
    graded_dir = root / "graded"
    assert main(["synth", "--config", str(graded_cfg_path), "--out", str(graded_dir)]) == 0
    pre_dir = root / "pretrain"
    assert (
        main([
            "pretrain", "--config", str(cfg_path),
            "--manifest", str(data_dir / "manifest.jsonl"), "--out", str(pre_dir),
        ])
        == 0
    )
    return {
        "root": root,
        "cfg": cfg_path,
        "graded_cfg": graded_cfg_path,
        "data": data_dir,
        "graded": graded_dir,
        "pretrain": pre_dir,
    }


def test_synth_scan_counts(tmp_path):
    cfg_path = tmp_path / "cfg.txt"
    save_config(smoke_config(subjects=10, followup_fraction=0.5), cfg_path)
    out = tmp_path / "d"
    assert main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
    entries = read_manifest(out / "manifest.jsonl")
    assert len(entries) == 15  # 10 baselines + 5 follow-ups
    vol_files = list((out / "volumes").glob("*.lsvol"))
    assert len(vol_files) == 15 * 13  # 7 VB + 6 IVD per scan


def test_synth_rerun_byte_identical(smoke_dirs, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--config", str(smoke_dirs["cfg"]), "--out", str(again)]) == 0
    a_root, b_root = smoke_dirs["data"], again
    a_files = sorted(p.relative_to(a_root) for p in a_root.rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(b_root) for p in b_root.rglob("*") if p.is_file())
    assert a_files == b_files
    for rel in a_files:
        ha = hashlib.sha256((a_root / rel).read_bytes()).hexdigest()
        hb = hashlib.sha256((b_root / rel).read_bytes()).hexdigest()
        assert ha == hb, rel


def test_pretrain_emits_three_artifacts(smoke_dirs):
    pre = smoke_dirs["pretrain"]
    assert (pre / "checkpoint.lsckpt").exists()
    assert (pre / "history.csv").exists()
    assert (pre / "verification.json").exists()
    report = MetricsReport.load(pre / "verification.json")
    assert 0.0 <= report.auc <= 1.0
    history_lines = (pre / "history.csv").read_text().strip().splitlines()
    assert len(history_lines) == 5 + 1


def test_pretrain_rerun_bitwise_identical_checkpoint(smoke_dirs, tmp_path):
    rerun = tmp_path / "rerun"
    assert (
        main([
            "pretrain", "--config", str(smoke_dirs["cfg"]),
            "--manifest", str(smoke_dirs["data"] / "manifest.jsonl"), "--out", str(rerun),
        ])
        == 0
    )
    a = (smoke_dirs["pretrain"] / "checkpoint.lsckpt").read_bytes()
    b = (rerun / "checkpoint.lsckpt").read_bytes()
    assert a == b
    assert (smoke_dirs["pretrain"] / "history.csv").read_text() == (rerun / "history.csv").read_text()


def test_transfer_scratch_ignores_checkpoint(smoke_dirs, tmp_path):
    manifest = str(smoke_dirs["graded"] / "manifest.jsonl")
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    base = ["transfer", "--config", str(smoke_dirs["graded_cfg"]), "--manifest", manifest, "--mode", "scratch"]
    assert main(base + ["--out", str(out_a)]) == 0
    assert main(base + ["--out", str(out_b), "--checkpoint", str(smoke_dirs["pretrain"] / "checkpoint.lsckpt")]) == 0
    assert (out_a / "grading_scratch.json").read_text() == (out_b / "grading_scratch.json").read_text()


def test_transfer_pretrained_frozen_conv_matches_checkpoint(smoke_dirs, tmp_path):
    out = tmp_path / "t"
    assert (
        main([
            "transfer", "--config", str(smoke_dirs["graded_cfg"]),
            "--manifest", str(smoke_dirs["graded"] / "manifest.jsonl"),
            "--checkpoint", str(smoke_dirs["pretrain"] / "checkpoint.lsckpt"),
            "--mode", "pretrained_frozen", "--out", str(out),
        ])
        == 0
    )
    source = load_checkpoint(smoke_dirs["pretrain"] / "checkpoint.lsckpt")
    trained = load_checkpoint(out / "classifier_pretrained_frozen.lsckpt")
    conv_names = [n for n in source.params if n.startswith("conv")]
    assert conv_names
    for name in conv_names:
        assert np.array_equal(source.params[name], trained.params[name]), name
    report = MetricsReport.load(out / "grading_pretrained_frozen.json")
    assert report.avg_class_accuracy is not None


def test_curve_emits_csv(smoke_dirs, tmp_path):
    out = tmp_path / "curve"
    assert (
        main([
            "curve", "--config", str(smoke_dirs["graded_cfg"]),
            "--manifest", str(smoke_dirs["graded"] / "manifest.jsonl"),
            "--modes", "random_frozen", "--out", str(out),
        ])
        == 0
    )
    lines = (out / "curve.csv").read_text().strip().splitlines()
    assert lines[0] == "size_subjects,size_scans,mode,mean_accuracy,std_accuracy"
    assert len(lines) >= 2
    rows = json.loads((out / "curve.json").read_text())
    assert all(r["mode"] == "random_frozen" for r in rows)


def test_report_command(smoke_dirs, capsys):
    assert main(["report", str(smoke_dirs["pretrain"] / "checkpoint.lsckpt")]) == 0
    out = capsys.readouterr().out
    assert "parameters" in out and "config hash" in out
    assert main(["report", str(smoke_dirs["pretrain"] / "verification.json")]) == 0
    out = capsys.readouterr().out
    assert "AUC" in out


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["pretrain", "--manifest", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nothing.txt")]) == 1
    bad_cfg = tmp_path / "bad.txt"
    bad_cfg.write_text("bogus.key = 1\n")
    assert main(["synth", "--config", str(bad_cfg), "--out", str(tmp_path / "x")]) == 1


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("LONGSPINE_OUT", str(tmp_path / "envroot"))
    cfg_path = tmp_path / "cfg.txt"
    save_config(smoke_config(subjects=4, followup_fraction=0.5), cfg_path)
    assert main(["synth", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "envroot" / "manifest.jsonl").exists()
