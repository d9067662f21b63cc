"""Evaluation of the pretrained representation: verification ROC/AUC on
held-out pairs, weight transfer into the grading classifier with its
baselines, and the learning-curve experiment.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .dataio import ScanRecord, group_by_subject
from .metrics import (
    MetricsReport,
    avg_class_accuracy,
    confusion_matrix,
    distance_histogram,
    roc_auc,
    spearman_rho,
)
from .net import ConvLayer, Network, NetworkSpec
from .ops import ShapeError
from .pairs import SamplingError, SplitAssignment, all_test_pairs, largest_remainder
from .train import (
    TrainConfig,
    TrainingHistory,
    classify,
    embed_records,
    graded_samples,
    level_accuracy,
    split_records,
    train_classifier,
)
from .volumes import DataError

TRANSFER_MODES = ("pretrained_frozen", "scratch", "random_frozen")


# -- verification (held-out same-subject discrimination) ---------------------


def verification_report(model: Network, records: list[ScanRecord], split: str, bins: int = 20) -> MetricsReport:
    """Distances between every level-matched pair of a split, scored as
    -distance so that larger means more likely same-subject."""
    pairs = all_test_pairs(records, split)
    if not pairs:
        raise DataError(f"no pairs available in split {split!r}")
    emb = embed_records(model, records)
    dists = np.array(
        [
            np.sqrt(
                (
                    (
                        emb[(p.a.subject_id, p.a.scan_time, p.a.level)]
                        - emb[(p.b.subject_id, p.b.scan_time, p.b.level)]
                    )
                    ** 2
                ).sum()
            )
            for p in pairs
        ]
    )
    labels = np.array([p.label for p in pairs])
    auc, points = roc_auc(-dists, labels)
    return MetricsReport(
        auc=auc,
        roc_points=points,
        histogram=distance_histogram(dists, labels, bins),
        extra={
            "n_pairs": len(pairs),
            "n_positive": int(labels.sum()),
            "aux_level_accuracy": level_accuracy(model, records),
            "split": split,
        },
    )


def raw_voxel_report(records: list[ScanRecord], split: str = "") -> MetricsReport:
    """Same protocol with raw-voxel L2 distance instead of embeddings; the
    baseline any learned representation has to beat."""
    pairs = all_test_pairs(records, split)
    table = {}
    for rec in records:
        for level, vol in rec.vb.items():
            table[(rec.subject_id, rec.scan_time, level)] = vol.voxels.ravel()
    dists = np.array(
        [
            np.sqrt(
                (
                    (table[(p.a.subject_id, p.a.scan_time, p.a.level)] - table[(p.b.subject_id, p.b.scan_time, p.b.level)])
                    ** 2
                ).sum()
            )
            for p in pairs
        ]
    )
    labels = np.array([p.label for p in pairs])
    auc, points = roc_auc(-dists, labels)
    return MetricsReport(auc=auc, roc_points=points, extra={"n_pairs": len(pairs)})


# -- weight transfer ----------------------------------------------------------


def _conv_layerspecs(spec: NetworkSpec):
    return [ls for ls in spec.layers if ls.kind in ("conv3d", "conv2d")]


def transfer_conv_weights(
    source: Network, classifier_spec: NetworkSpec, seed: int, dtype=None, freeze: bool = True
) -> Network:
    """Fresh classifier network whose conv parameters are copied bit-exactly
    from the source; fully connected layers keep their fresh seed-derived
    initialisation.  Conv layers are marked frozen unless fine-tuning."""
    src_convs = _conv_layerspecs(source.spec)
    dst_convs = _conv_layerspecs(classifier_spec)
    if len(src_convs) != len(dst_convs):
        raise ShapeError(f"conv stack depth differs: {len(src_convs)} vs {len(dst_convs)}")
    for i, (a, b) in enumerate(zip(src_convs, dst_convs)):
        if a != b:
            raise ShapeError(f"conv layer {i + 1} differs between source and classifier spec: {a} vs {b}")
    model = Network(classifier_spec, seed=seed, dtype=dtype or source.dtype)
    src_layers = [l for l in source.layers if isinstance(l, ConvLayer)]
    dst_layers = [l for l in model.layers if isinstance(l, ConvLayer)]
    for src, dst in zip(src_layers, dst_layers):
        dst.w.data[...] = src.w.data.astype(model.dtype)
        dst.b.data[...] = src.b.data.astype(model.dtype)
    model.set_conv_frozen(freeze)
    return model


def build_classifier(
    mode: str,
    classifier_spec: NetworkSpec,
    seed: int,
    source: Network | None = None,
    dtype=np.float64,
    finetune_conv: bool = False,
) -> Network:
    if mode not in TRANSFER_MODES:
        raise DataError(f"unknown transfer mode {mode!r}; expected one of {TRANSFER_MODES}")
    if mode == "pretrained_frozen":
        if source is None:
            raise DataError("pretrained_frozen mode needs a source model")
        return transfer_conv_weights(source, classifier_spec, seed, dtype=dtype, freeze=not finetune_conv)
    model = Network(classifier_spec, seed=seed, dtype=dtype)
    if mode == "random_frozen":
        model.set_conv_frozen(True)
    return model


# -- grading protocol ---------------------------------------------------------


def grading_split(
    records: list[ScanRecord],
    ratios: tuple[float, float, float],
    rng: np.random.Generator,
) -> SplitAssignment:
    """Subject split for the grading task: subjects with more than one scan
    are used for training only; validation and test subjects are drawn
    from the single-scan pool."""
    by_subject = group_by_subject([r for r in records if r.grades])
    if not by_subject:
        raise SamplingError("no graded scans available")
    subjects = sorted(by_subject)
    multi = [s for s in subjects if len(by_subject[s]) > 1]
    single = [s for s in subjects if len(by_subject[s]) == 1]
    quotas = largest_remainder(len(subjects), ratios)
    if quotas[1] + quotas[2] > len(single):
        raise SamplingError(
            f"not enough single-scan subjects ({len(single)}) for validation+test quota "
            f"({quotas[1] + quotas[2]})"
        )
    order = rng.permutation(len(single))
    assignment = {s: "train" for s in multi}
    cursor = 0
    for split, quota in (("validation", quotas[1]), ("test", quotas[2])):
        for k in range(quota):
            assignment[single[order[cursor + k]]] = split
        cursor += quota
    for k in range(cursor, len(single)):
        assignment[single[order[k]]] = "train"
    return SplitAssignment(assignment)


def run_grading(
    mode: str,
    records: list[ScanRecord],
    assignment: SplitAssignment,
    classifier_spec: NetworkSpec,
    cfg: TrainConfig,
    source: Network | None = None,
    train_subject_ids: list[str] | None = None,
    n_classes: int = 4,
    aug_cfg=None,
) -> tuple[Network, MetricsReport, TrainingHistory]:
    """Train one grading classifier and report on the held-out test set."""
    train_recs = split_records(records, assignment, "train")
    if train_subject_ids is not None:
        keep = set(train_subject_ids)
        train_recs = [r for r in train_recs if r.subject_id in keep]
    val_recs = split_records(records, assignment, "validation")
    test_recs = split_records(records, assignment, "test")

    model = build_classifier(
        mode, classifier_spec, seed=cfg.seed, source=source, dtype=cfg.np_dtype(), finetune_conv=cfg.finetune_conv
    )
    train_samples = graded_samples(train_recs)
    val_samples = graded_samples(val_recs)
    test_samples = graded_samples(test_recs)
    history = train_classifier(model, train_samples, val_samples, cfg, n_classes=n_classes, aug_cfg=aug_cfg)

    y_true = np.array([g for _, g in test_samples])
    y_pred = classify(model, test_samples)
    cm = confusion_matrix(y_true, y_pred, n_classes)
    report = MetricsReport(
        confusion=cm.tolist(),
        avg_class_accuracy=avg_class_accuracy(cm),
        per_class_counts=np.bincount(y_true, minlength=n_classes).tolist(),
        extra={
            "mode": mode,
            "n_train_scans": len(train_recs),
            "n_train_samples": len(train_samples),
            "n_test_samples": len(test_samples),
            "overall_accuracy": float((y_true == y_pred).mean()),
        },
    )
    return model, report, history


def learning_curve(
    records: list[ScanRecord],
    assignment: SplitAssignment,
    classifier_spec: NetworkSpec,
    cfg: TrainConfig,
    sizes: list[int],
    modes: list[str],
    repetitions: int,
    source: Network | None = None,
    subset_seed: int = 0,
    n_classes: int = 4,
) -> list[dict]:
    """Average class accuracy per (training size in subjects, mode), with
    nested subject subsets per repetition and mean/std over repetitions."""
    train_subjects = assignment.subjects("train")
    if max(sizes) > len(train_subjects):
        raise SamplingError(f"requested size {max(sizes)} exceeds {len(train_subjects)} training subjects")
    if sorted(sizes) != list(sizes):
        raise SamplingError("sizes must be increasing so subsets nest")
    by_subject = group_by_subject(records)

    rows = []
    for mode in modes:
        for size in sizes:
            accs = []
            scan_counts = []
            for rep in range(repetitions):
                order = np.random.default_rng([subset_seed, 600, rep]).permutation(len(train_subjects))
                subset = [train_subjects[int(i)] for i in order[:size]]
                scan_counts.append(sum(len(by_subject[s]) for s in subset))
                rep_cfg = replace(cfg, seed=cfg.seed + 1000 * rep)
                _, report, _ = run_grading(
                    mode,
                    records,
                    assignment,
                    classifier_spec,
                    rep_cfg,
                    source=source,
                    train_subject_ids=subset,
                    n_classes=n_classes,
                )
                accs.append(report.avg_class_accuracy)
            n_scans = int(round(float(np.mean(scan_counts))))
            rows.append(
                {
                    "size_subjects": size,
                    "size_scans": n_scans,
                    "mode": mode,
                    "mean_accuracy": float(np.mean(accs)),
                    "std_accuracy": float(np.std(accs)),
                    "accuracies": [float(a) for a in accs],
                }
            )
    return rows


def curve_to_csv(rows: list[dict], path) -> None:
    lines = ["size_subjects,size_scans,mode,mean_accuracy,std_accuracy"]
    for r in rows:
        lines.append(
            f"{r['size_subjects']},{r['size_scans']},{r['mode']},{r['mean_accuracy']!r},{r['std_accuracy']!r}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def curve_monotonicity(rows: list[dict], mode: str) -> float:
    """Spearman rank correlation between training size and mean accuracy."""
    pts = sorted((r["size_subjects"], r["mean_accuracy"]) for r in rows if r["mode"] == mode)
    return spearman_rho([p[0] for p in pts], [p[1] for p in pts])
