"""Command-line front end: synth, pretrain, transfer, curve, report.

Every command is deterministic given its configuration file; rerunning
with the same config reproduces outputs byte for byte.  The output root
defaults to $LONGSPINE_OUT or ./longspine_out.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    ExperimentConfig,
    Seeds,
    config_hash,
    load_config,
    save_config,
)
from .dataio import load_dataset, write_dataset
from .metrics import MetricError, MetricsReport
from .net import classifier_spec, siamese_spec
from .ops import ShapeError
from .pairs import SamplingError, split_subjects
from .synth import synth_cohort
from .train import DivergenceError, split_records, train_siamese
from .transfer import (
    TRANSFER_MODES,
    curve_to_csv,
    grading_split,
    learning_curve,
    run_grading,
    verification_report,
)
from .volumes import ANATOMY_IVD, ANATOMY_VB, DataError

USER_ERRORS = (
    ConfigError,
    DataError,
    SamplingError,
    ShapeError,
    CheckpointError,
    MetricError,
    DivergenceError,
    FileNotFoundError,
)


class CliError(RuntimeError):
    pass


def output_root(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get("LONGSPINE_OUT", "longspine_out"))


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    updates = {}
    if getattr(args, "geometry", None):
        updates["geometry_mode"] = args.geometry
    if getattr(args, "seed", None) is not None:
        updates["seeds"] = Seeds(args.seed, args.seed + 1, args.seed + 2, args.seed + 3)
    if getattr(args, "subjects", None) is not None:
        updates["generator"] = dataclasses.replace(cfg.generator, subjects=args.subjects)
    if getattr(args, "followup_fraction", None) is not None:
        gen = updates.get("generator", cfg.generator)
        updates["generator"] = dataclasses.replace(gen, followup_fraction=args.followup_fraction)
    if getattr(args, "max_epochs", None) is not None:
        updates["siamese"] = dataclasses.replace(cfg.siamese, max_epochs=args.max_epochs)
        updates["classifier"] = dataclasses.replace(cfg.classifier, max_epochs=args.max_epochs)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def cmd_synth(args) -> int:
    cfg = _load_experiment(args)
    out = output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = synth_cohort(cfg.generator, cfg.geometry(), cfg.seeds.generator)
    manifest = write_dataset(out, records)
    save_config(cfg, out / "config.txt")
    print(f"wrote {len(records)} scans for {cfg.generator.subjects} subjects to {manifest}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_experiment(args)
    out = output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = load_dataset(args.manifest, anatomies=(ANATOMY_VB,))
    subjects = sorted({r.subject_id for r in records})
    assignment = split_subjects(subjects, [], cfg.split_ratios, np.random.default_rng([cfg.seeds.split, 0]))

    spec = siamese_spec(cfg.geometry().vb_shape, mode=cfg.geometry_mode)
    model, history, opt = train_siamese(
        records,
        assignment,
        spec,
        cfg.siamese,
        aug_cfg=cfg.augment.scaled_for(cfg.geometry()) if cfg.siamese.augment_enabled else None,
        geometry=cfg.geometry(),
        init_seed=cfg.seeds.init,
        epoch_seed=cfg.seeds.epoch,
    )
    history.to_csv(out / "history.csv")
    save_checkpoint(
        out / "checkpoint.lsckpt",
        model,
        optim=opt,
        history_summary=history.summary(),
        config_hash=config_hash(cfg),
    )
    report = verification_report(model, split_records(records, assignment, "test"), "test")
    report.extra["config_hash"] = config_hash(cfg)
    report.save(out / "verification.json")
    save_config(cfg, out / "config.txt")
    print(
        f"pretraining finished after {len(history.rows)} epochs: "
        f"verification AUC {report.auc:.4f}, level accuracy {report.extra['aux_level_accuracy']:.4f}"
    )
    return 0


def _classifier_setup(cfg: ExperimentConfig, manifest, checkpoint_path, mode):
    records = load_dataset(manifest, anatomies=(ANATOMY_IVD,))
    assignment = grading_split(records, cfg.grading_ratios, np.random.default_rng([cfg.seeds.split, 1]))
    spec = classifier_spec(cfg.geometry().ivd_shape, n_classes=4, mode=cfg.geometry_mode)
    source = None
    if mode == "pretrained_frozen" or mode == "all":
        if not checkpoint_path:
            raise DataError("pretrained_frozen mode needs --checkpoint")
        ckpt = load_checkpoint(checkpoint_path)
        source = ckpt.build_model(seed=cfg.seeds.init)
    clf_cfg = dataclasses.replace(cfg.classifier, seed=cfg.seeds.init)
    return records, assignment, spec, source, clf_cfg


def cmd_transfer(args) -> int:
    cfg = _load_experiment(args)
    out = output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, assignment, spec, source, clf_cfg = _classifier_setup(
        cfg, args.manifest, args.checkpoint if args.mode == "pretrained_frozen" else None, args.mode
    )
    model, report, history = run_grading(args.mode, records, assignment, spec, clf_cfg, source=source)
    report.extra["config_hash"] = config_hash(cfg)
    report.save(out / f"grading_{args.mode}.json")
    history.to_csv(out / f"grading_{args.mode}_history.csv")
    save_checkpoint(
        out / f"classifier_{args.mode}.lsckpt",
        model,
        history_summary=history.summary(),
        config_hash=config_hash(cfg),
    )
    print(f"{args.mode}: average class accuracy {report.avg_class_accuracy:.4f} on {report.extra['n_test_samples']} test discs")
    return 0


def cmd_curve(args) -> int:
    cfg = _load_experiment(args)
    out = output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = args.modes.split(",") if args.modes else list(TRANSFER_MODES)
    needs_ckpt = "pretrained_frozen" in modes
    records, assignment, spec, source, clf_cfg = _classifier_setup(
        cfg, args.manifest, args.checkpoint if needs_ckpt else None, "all" if needs_ckpt else modes[0]
    )
    sizes = list(cfg.curve_sizes)
    if not sizes:
        pool = len(assignment.subjects("train"))
        sizes = sorted({max(2, int(round(f * pool))) for f in cfg.curve_fractions})
    rows = learning_curve(
        records,
        assignment,
        spec,
        clf_cfg,
        sizes,
        modes,
        cfg.curve_repetitions,
        source=source,
        subset_seed=cfg.seeds.split,
    )
    curve_to_csv(rows, out / "curve.csv")
    (out / "curve.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(
            f"{r['mode']:>17} size={r['size_subjects']:>4} subjects ({r['size_scans']} scans): "
            f"{r['mean_accuracy']:.4f} +/- {r['std_accuracy']:.4f}"
        )
    return 0


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.suffix == ".lsckpt":
        ckpt = load_checkpoint(path)
        n_params = sum(int(np.prod(a.shape)) for a in ckpt.params.values())
        print(f"checkpoint {path}")
        print(f"  dtype          {ckpt.dtype}")
        print(f"  parameters     {n_params} in {len(ckpt.params)} tensors")
        print(f"  config hash    {ckpt.config_hash}")
        for key, value in sorted(ckpt.history_summary.items()):
            print(f"  {key:<14} {value}")
        return 0
    if path.suffix == ".json":
        report = MetricsReport.load(path)
        print(f"report {path}")
        if report.auc is not None:
            print(f"  AUC                  {report.auc:.4f}")
        if report.avg_class_accuracy is not None:
            print(f"  avg class accuracy   {report.avg_class_accuracy:.4f}")
        if report.confusion is not None:
            print(f"  confusion            {report.confusion}")
        for key, value in sorted(report.extra.items()):
            print(f"  {key:<20} {value}")
        return 0
    raise DataError(f"cannot summarise {path}: expected a .lsckpt or .json file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longspine", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False, checkpoint=False, mode=False):
        p.add_argument("--config", help="experiment config file (flat key = value)")
        p.add_argument("--out", help="output directory (default $LONGSPINE_OUT or ./longspine_out)")
        p.add_argument("--geometry", choices=("paper", "reduced"), help="override geometry mode")
        p.add_argument("--seed", type=int, help="override every seed from this base value")
        p.add_argument("--max-epochs", type=int, dest="max_epochs", help="override training epoch cap")
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest (JSON lines)")
        if checkpoint:
            p.add_argument("--checkpoint", help="pretraining checkpoint (.lsckpt)")
        if mode:
            p.add_argument("--mode", choices=TRANSFER_MODES, default="pretrained_frozen")

    p = sub.add_parser("synth", help="generate a synthetic cohort and manifest")
    common(p)
    p.add_argument("--subjects", type=int, help="override subject count")
    p.add_argument("--followup-fraction", type=float, dest="followup_fraction")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pretrain", help="train the two-branch network on same-subject pairs")
    common(p, manifest=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("transfer", help="train the grading classifier in one transfer mode")
    common(p, manifest=True, checkpoint=True, mode=True)
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("curve", help="accuracy vs training-set size for each transfer mode")
    common(p, manifest=True, checkpoint=True)
    p.add_argument("--modes", help="comma-separated transfer modes (default: all)")
    p.set_defaults(fn=cmd_curve)

    p = sub.add_parser("report", help="summarise a checkpoint or metrics file")
    p.add_argument("path")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
