"""Training loops: the two-branch weight-shared network with the combined
contrastive + level-prediction loss, and the disc-grading classifier.

Both loops are replay-deterministic: every random draw comes from a
generator keyed on (config seed, purpose constant, epoch).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, augment, augment_pair
from .dataio import ScanRecord
from .losses import class_weights, contrastive_loss_batch
from .metrics import roc_auc
from .net import Network, NetworkSpec
from .optim import OptimState, sgd_step
from .ops import softmax_log_loss_batch
from .pairs import Pair, SplitAssignment, epoch_batches, generate_pairs, validate_pairs
from .volumes import GRADED_DISC_LEVELS, VB_LEVELS, DataError, GeometryConfig, Volume

VALIDATION_METRICS = ("loss", "pair_error", "joint_error")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the last good state."""

    def __init__(self, message, history, last_good_state):
        super().__init__(message)
        self.history = history
        self.last_good_state = last_good_state


@dataclass
class TrainConfig:
    margin: float = 1.0
    beta: float = 1.0
    batch_size: int = 32
    lr: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 0.0005
    plateau_patience: int = 10
    lr_drop_factor: float = 10.0
    min_delta: float = 1e-4
    max_lr_drops: int = 2
    max_epochs: int = 500
    negatives_per_positive: float = 1.0
    dtype: str = "float64"
    augment_enabled: bool = True
    finetune_conv: bool = False
    # what "validation error" means for the plateau rule and for picking the
    # returned model: the combined loss, the pair-ranking error (1 - AUC), or
    # their multi-task sum with the level error
    validation_metric: str = "loss"
    restore_best: bool = True
    seed: int = 0

    def np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise DataError(f"dtype must be float32 or float64, got {self.dtype}")
        return np.dtype(self.dtype)


def classifier_defaults(**overrides) -> TrainConfig:
    """Grading-classifier hyperparameters (batch 128, lr 1e-3)."""
    cfg = TrainConfig(batch_size=128, lr=1e-3, augment_enabled=False)
    return replace(cfg, **overrides)


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    aux_accuracy: float


@dataclass
class TrainingHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    lr_drop_epochs: list[int] = field(default_factory=list)
    stopped_reason: str = ""
    best_epoch: int = 0

    def append(self, row: HistoryRow):
        self.rows.append(row)

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss,lr,aux_accuracy"]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r},{r.aux_accuracy!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary(self) -> dict:
        if not self.rows:
            return {"epochs": 0, "stopped_reason": self.stopped_reason}
        last = self.rows[-1]
        return {
            "epochs": len(self.rows),
            "final_train_loss": last.train_loss,
            "final_val_loss": last.val_loss,
            "best_val_loss": min(r.val_loss for r in self.rows),
            "final_aux_accuracy": last.aux_accuracy,
            "lr_drop_epochs": list(self.lr_drop_epochs),
            "best_epoch": self.best_epoch,
            "stopped_reason": self.stopped_reason,
        }


class PlateauScheduler:
    """Divide the learning rate by `factor` after `patience` consecutive
    epochs without a validation improvement greater than min_delta; after
    max_drops reductions the next plateau stops training."""

    def __init__(self, lr, patience, factor=10.0, min_delta=1e-4, max_drops=2):
        self.lr = float(lr)
        self.patience = int(patience)
        self.factor = float(factor)
        self.min_delta = float(min_delta)
        self.max_drops = int(max_drops)
        self.best = np.inf
        self.streak = 0
        self.drops = 0

    def update(self, val_loss: float) -> str:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.streak = 0
            return "improve"
        self.streak += 1
        if self.streak >= self.patience:
            if self.drops >= self.max_drops:
                return "stop"
            self.drops += 1
            self.lr /= self.factor
            self.streak = 0
            return "drop"
        return "wait"


# -- batch assembly ----------------------------------------------------------


def vb_lookup(records: list[ScanRecord]) -> dict[tuple, Volume]:
    table = {}
    for rec in records:
        for level, vol in rec.vb.items():
            table[(rec.subject_id, rec.scan_time, level)] = vol
    return table


def _ref_volume(table, ref):
    try:
        return table[(ref.subject_id, ref.scan_time, ref.level)]
    except KeyError:
        raise DataError(f"no volume for {ref.subject_id} t={ref.scan_time} level={ref.level}") from None


def assemble_pair_batch(
    batch: list[Pair],
    table: dict,
    aug_cfg: AugmentConfig | None,
    rng: np.random.Generator | None,
    dtype,
):
    """Stack a pair batch into (xa, xb, y, levels_a, levels_b) arrays."""
    va_list, vb_list, ys = [], [], []
    for pair in batch:
        va = _ref_volume(table, pair.a)
        vb = _ref_volume(table, pair.b)
        if aug_cfg is not None:
            va, vb = augment_pair(va, vb, aug_cfg, rng)
        va_list.append(va)
        vb_list.append(vb)
        ys.append(pair.label)
    xa = np.stack([v.to_input() for v in va_list]).astype(dtype)
    xb = np.stack([v.to_input() for v in vb_list]).astype(dtype)
    la = np.array([v.level_index() for v in va_list], dtype=np.intp)
    lb = np.array([v.level_index() for v in vb_list], dtype=np.intp)
    return xa, xb, np.array(ys), la, lb


def combined_loss(
    model: Network,
    xa,
    xb,
    y,
    levels_a,
    levels_b,
    margin: float,
    beta: float,
    alphas: np.ndarray | None,
    train: bool = True,
):
    """Contrastive sum over the batch plus beta times the level losses of
    both branches.  When train=True, gradients are accumulated into the
    model's parameters."""
    logits_a, emb_a, caches_a = model.forward(xa)
    logits_b, emb_b, caches_b = model.forward(xb)
    c_loss, da, db = contrastive_loss_batch(emb_a, emb_b, y, margin)
    aux_a, dlog_a = softmax_log_loss_batch(logits_a, levels_a, alphas)
    aux_b, dlog_b = softmax_log_loss_batch(logits_b, levels_b, alphas)
    total = c_loss + beta * (aux_a + aux_b)
    if train:
        model.backward(beta * dlog_a, da, caches_a)
        model.backward(beta * dlog_b, db, caches_b)
    parts = {"contrastive": c_loss, "aux": aux_a + aux_b}
    return total, parts


def level_accuracy(model: Network, records: list[ScanRecord], batch: int = 64) -> float:
    """Fraction of vertebral-body volumes whose level head picks the true
    level (evaluation mode, no augmentation)."""
    vols = [rec.vb[level] for rec in records for level in VB_LEVELS if level in rec.vb]
    if not vols:
        raise DataError("no vertebral volumes to evaluate")
    hits = 0
    for i in range(0, len(vols), batch):
        chunk = vols[i : i + batch]
        x = np.stack([v.to_input() for v in chunk]).astype(model.dtype)
        logits, _, _ = model.forward(x)
        pred = logits.argmax(axis=1)
        truth = np.array([v.level_index() for v in chunk])
        hits += int((pred == truth).sum())
    return hits / len(vols)


def embed_records(model: Network, records: list[ScanRecord], batch: int = 64) -> dict[tuple, np.ndarray]:
    """Embeddings of every vertebral volume, keyed (subject, time, level)."""
    keys, vols = [], []
    for rec in records:
        for level in VB_LEVELS:
            if level in rec.vb:
                keys.append((rec.subject_id, rec.scan_time, level))
                vols.append(rec.vb[level])
    out = {}
    for i in range(0, len(vols), batch):
        chunk = vols[i : i + batch]
        x = np.stack([v.to_input() for v in chunk]).astype(model.dtype)
        emb, _ = model.forward_embed(x)
        for k, e in zip(keys[i : i + batch], emb):
            out[k] = np.asarray(e, dtype=np.float64)
    return out


# -- Siamese training --------------------------------------------------------


def split_records(records: list[ScanRecord], assignment: SplitAssignment, split: str) -> list[ScanRecord]:
    return [r for r in records if assignment.of(r.subject_id) == split]


def _level_alphas(records: list[ScanRecord]) -> np.ndarray:
    counts = np.zeros(len(VB_LEVELS))
    for rec in records:
        for level in rec.vb:
            counts[VB_LEVELS.index(level)] += 1
    return class_weights(counts)


def pair_auc(model: Network, records: list[ScanRecord], pairs: list[Pair]) -> float:
    """Verification AUC of a fixed pair list under the current embedding."""
    emb = embed_records(model, records)
    d = np.array(
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
    return roc_auc(-d, labels)[0]


def train_siamese(
    records: list[ScanRecord],
    assignment: SplitAssignment,
    spec: NetworkSpec,
    cfg: TrainConfig,
    aug_cfg: AugmentConfig | None = None,
    geometry: GeometryConfig | None = None,
    init_seed: int | None = None,
    epoch_seed: int | None = None,
) -> tuple[Network, TrainingHistory, OptimState]:
    dtype = cfg.np_dtype()
    init_seed = cfg.seed if init_seed is None else init_seed
    epoch_seed = cfg.seed if epoch_seed is None else epoch_seed
    train_recs = split_records(records, assignment, "train")
    val_recs = split_records(records, assignment, "validation")
    if not train_recs or not val_recs:
        raise DataError("both train and validation splits must be nonempty")
    for rec in train_recs:
        if assignment.of(rec.subject_id) != "train":
            raise DataError(f"subject {rec.subject_id} leaked into training")

    if aug_cfg is None and cfg.augment_enabled:
        aug_cfg = AugmentConfig().scaled_for(geometry or GeometryConfig())
    if not cfg.augment_enabled:
        aug_cfg = None

    model = Network(spec, seed=init_seed, dtype=dtype)
    opt = OptimState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(cfg.lr, cfg.plateau_patience, cfg.lr_drop_factor, cfg.min_delta, cfg.max_lr_drops)
    alphas = _level_alphas(train_recs).astype(dtype)

    table = vb_lookup(train_recs)
    val_table = vb_lookup(val_recs)
    val_pairs = generate_pairs(val_recs, "validation", np.random.default_rng([epoch_seed, 7]), cfg.negatives_per_positive)
    validate_pairs(val_pairs, "validation")

    history = TrainingHistory()
    best_metric = np.inf
    best_state = None
    for epoch in range(1, cfg.max_epochs + 1):
        last_good = model.state_copy()
        pair_rng = np.random.default_rng([epoch_seed, 100, epoch])
        batch_rng = np.random.default_rng([epoch_seed, 200, epoch])
        aug_rng = np.random.default_rng([epoch_seed, 300, epoch])

        train_pairs = generate_pairs(train_recs, "train", pair_rng, cfg.negatives_per_positive)
        validate_pairs(train_pairs, "train")
        for pair in train_pairs:
            if assignment.of(pair.a.subject_id) != "train" or assignment.of(pair.b.subject_id) != "train":
                raise DataError("pair references a subject outside the training split")

        epoch_loss = 0.0
        for batch in epoch_batches(train_pairs, cfg.batch_size, batch_rng):
            xa, xb, y, la, lb = assemble_pair_batch(batch, table, aug_cfg, aug_rng, dtype)
            model.zero_grad()
            loss, _ = combined_loss(model, xa, xb, y, la, lb, cfg.margin, cfg.beta, alphas, train=True)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}", history, last_good
                )
            opt.lr = sched.lr
            sgd_step(model.params(), opt)
            epoch_loss += loss
        train_loss = epoch_loss / max(len(train_pairs), 1)

        val_loss = 0.0
        for batch in epoch_batches(val_pairs, cfg.batch_size, np.random.default_rng([epoch_seed, 8])):
            xa, xb, y, la, lb = assemble_pair_batch(batch, val_table, None, None, dtype)
            loss, _ = combined_loss(model, xa, xb, y, la, lb, cfg.margin, cfg.beta, alphas, train=False)
            val_loss += loss
        val_loss /= max(len(val_pairs), 1)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", history, last_good)
        aux_acc = level_accuracy(model, val_recs)

        if cfg.validation_metric == "loss":
            metric = float(val_loss)
        elif cfg.validation_metric == "pair_error":
            metric = 1.0 - pair_auc(model, val_recs, val_pairs)
        elif cfg.validation_metric == "joint_error":
            metric = (1.0 - pair_auc(model, val_recs, val_pairs)) + (1.0 - aux_acc)
        else:
            raise DataError(
                f"unknown validation metric {cfg.validation_metric!r}; expected one of {VALIDATION_METRICS}"
            )

        history.append(HistoryRow(epoch, float(train_loss), float(val_loss), sched.lr, float(aux_acc)))
        if metric < best_metric:
            best_metric = metric
            best_state = model.state_copy()
            history.best_epoch = epoch
        event = sched.update(metric)
        if event == "drop":
            history.lr_drop_epochs.append(epoch)
        elif event == "stop":
            history.stopped_reason = "plateau"
            break
    else:
        history.stopped_reason = history.stopped_reason or "max_epochs"
    if cfg.restore_best and best_state is not None:
        model.load_state(best_state)
    return model, history, opt


# -- grading classifier ------------------------------------------------------


def graded_samples(records: list[ScanRecord]) -> list[tuple[Volume, int]]:
    """(disc volume, grade-1) pairs for every annotated disc of every scan."""
    out = []
    for rec in records:
        if not rec.grades:
            continue
        for level in GRADED_DISC_LEVELS:
            if level in rec.ivd and level in rec.grades:
                out.append((rec.ivd[level], rec.grades[level] - 1))
    return out


def _sample_arrays(samples, dtype):
    x = np.stack([v.to_input() for v, _ in samples]).astype(dtype)
    y = np.array([g for _, g in samples], dtype=np.intp)
    return x, y


def _classifier_eval_loss(model, x, y, alphas, first_fc=None, feats=None, batch=256):
    total = 0.0
    n = x.shape[0] if feats is None else feats.shape[0]
    for i in range(0, n, batch):
        if feats is None:
            logits, _, _ = model.forward(x[i : i + batch])
        else:
            logits, _ = model.run(feats[i : i + batch], start=first_fc)
        loss, _ = softmax_log_loss_batch(logits, y[i : i + batch], alphas)
        total += loss
    return total / max(n, 1)


def train_classifier(
    model: Network,
    train_samples: list[tuple[Volume, int]],
    val_samples: list[tuple[Volume, int]],
    cfg: TrainConfig,
    n_classes: int = 4,
    aug_cfg: AugmentConfig | None = None,
) -> TrainingHistory:
    """Train (part of) a grading network with class-balanced softmax loss.

    When every conv parameter is frozen and augmentation is off, the conv
    features are computed once and only the fully connected stack runs per
    epoch; results are identical to the slow path because conv outputs do
    not depend on batch composition.
    """
    dtype = cfg.np_dtype()
    if not train_samples or not val_samples:
        raise DataError("classifier needs nonempty train and validation samples")
    counts = np.bincount([g for _, g in train_samples], minlength=n_classes)
    alphas = class_weights(counts).astype(dtype)

    if cfg.augment_enabled and aug_cfg is None:
        raise DataError("augmentation enabled but no AugmentConfig supplied")
    use_aug = cfg.augment_enabled

    conv_frozen = all(p.frozen for p in model.conv_params())
    fast = conv_frozen and not use_aug
    first_fc = model.first_fc_index()

    x_train, y_train = _sample_arrays(train_samples, dtype)
    x_val, y_val = _sample_arrays(val_samples, dtype)
    feats_train = feats_val = None
    if fast:
        feats_train = _forward_features(model, x_train, first_fc)
        feats_val = _forward_features(model, x_val, first_fc)

    opt = OptimState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(cfg.lr, cfg.plateau_patience, cfg.lr_drop_factor, cfg.min_delta, cfg.max_lr_drops)
    history = TrainingHistory()
    n = len(train_samples)

    for epoch in range(1, cfg.max_epochs + 1):
        last_good = model.state_copy()
        order = np.random.default_rng([cfg.seed, 400, epoch]).permutation(n)
        aug_rng = np.random.default_rng([cfg.seed, 500, epoch])
        epoch_loss = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            model.zero_grad()
            if fast:
                logits, caches = model.run(feats_train[idx], start=first_fc)
                loss, dlog = softmax_log_loss_batch(logits, y_train[idx], alphas)
                model.run_backward(dlog, caches, start=first_fc)
            else:
                if use_aug:
                    vols = [augment(train_samples[int(k)][0], aug_cfg, aug_rng) for k in idx]
                    xb = np.stack([v.to_input() for v in vols]).astype(dtype)
                else:
                    xb = x_train[idx]
                logits, _, caches = model.forward(xb)
                loss, dlog = softmax_log_loss_batch(logits, y_train[idx], alphas)
                model.backward(dlog, None, caches)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite classifier loss at epoch {epoch}", history, last_good)
            opt.lr = sched.lr
            sgd_step(model.params(), opt)
            epoch_loss += loss

        val_loss = _classifier_eval_loss(model, x_val, y_val, alphas, first_fc, feats_val)
        history.append(HistoryRow(epoch, float(epoch_loss / n), float(val_loss), sched.lr, float("nan")))
        event = sched.update(float(val_loss))
        if event == "drop":
            history.lr_drop_epochs.append(epoch)
        elif event == "stop":
            history.stopped_reason = "plateau"
            break
    else:
        history.stopped_reason = "max_epochs"
    return history


def _forward_features(model: Network, x: np.ndarray, first_fc: int, batch: int = 128) -> np.ndarray:
    chunks = []
    for i in range(0, x.shape[0], batch):
        out, _ = model.run(x[i : i + batch], stop=first_fc)
        chunks.append(out)
    return np.concatenate(chunks, axis=0)


def classify(model: Network, samples: list[tuple[Volume, int]], batch: int = 256) -> np.ndarray:
    """Predicted class indices, evaluation mode."""
    x, _ = _sample_arrays(samples, model.dtype)
    preds = []
    for i in range(0, x.shape[0], batch):
        logits, _, _ = model.forward(x[i : i + batch])
        preds.append(logits.argmax(axis=1))
    return np.concatenate(preds)
