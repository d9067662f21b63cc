"""Training-loop behaviour: plateau rule, determinism, divergence handling,
single-batch overfit."""

import numpy as np
import pytest

from longspine.augment import AugmentConfig
from longspine.net import Network, siamese_spec
from longspine.optim import OptimState, sgd_step
from longspine.pairs import generate_pairs, split_subjects
from longspine.synth import GeneratorConfig, synth_cohort
from longspine.train import (
    DivergenceError,
    PlateauScheduler,
    TrainConfig,
    assemble_pair_batch,
    combined_loss,
    train_siamese,
    vb_lookup,
)
from longspine.volumes import GeometryConfig

GEOM = GeometryConfig()


def small_cohort(n=8, seed=5):
    return synth_cohort(GeneratorConfig(subjects=n, followup_fraction=1.0), GEOM, seed=seed)


def assignment_for(records):
    subjects = sorted({r.subject_id for r in records})
    return split_subjects(subjects, [], (0.5, 0.25, 0.25), np.random.default_rng(1))


# -- plateau scheduler ---------------------------------------------------------


def test_constant_loss_drops_after_exactly_patience_epochs():
    sched = PlateauScheduler(lr=1.0, patience=3, factor=10.0)
    events = [sched.update(0.5) for _ in range(5)]
    # first epoch improves on +inf, then 3 non-improving epochs trigger the drop
    assert events == ["improve", "wait", "wait", "drop", "wait"]
    assert sched.lr == pytest.approx(0.1)


def test_second_drop_then_stop():
    sched = PlateauScheduler(lr=1.0, patience=2, factor=10.0, max_drops=2)
    sched.update(0.5)
    events = [sched.update(0.5) for _ in range(6)]
    assert events == ["wait", "drop", "wait", "drop", "wait", "stop"]
    assert sched.lr == pytest.approx(0.01)


def test_improvement_must_exceed_min_delta():
    sched = PlateauScheduler(lr=1.0, patience=2, min_delta=1e-4)
    assert sched.update(1.0) == "improve"
    assert sched.update(1.0 - 5e-5) == "wait"  # too small to count
    assert sched.update(0.9) == "improve"


# -- single-batch overfit -------------------------------------------------------


def test_single_batch_overfit_reduces_loss_ninety_percent():
    records = small_cohort(4, seed=5)
    pairs = generate_pairs(records, "train", np.random.default_rng(0), 1.0)
    batch = [p for p in pairs if p.label == 1][:4] + [p for p in pairs if p.label == 0][:4]
    table = vb_lookup(records)
    xa, xb, y, la, lb = assemble_pair_batch(batch, table, None, None, np.float64)

    model = Network(siamese_spec(GEOM.vb_shape), seed=3)
    opt = OptimState(lr=3e-4, momentum=0.9, weight_decay=5e-4)
    model.zero_grad()
    first, _ = combined_loss(model, xa, xb, y, la, lb, 1.0, 1.0, None, train=True)
    sgd_step(model.params(), opt)
    loss = first
    for _ in range(199):
        if loss <= 0.1 * first:
            break
        model.zero_grad()
        loss, _ = combined_loss(model, xa, xb, y, la, lb, 1.0, 1.0, None, train=True)
        sgd_step(model.params(), opt)
    assert loss <= 0.1 * first, f"loss only fell from {first:.3f} to {loss:.3f}"


# -- end-to-end loop ------------------------------------------------------------


def fast_cfg(**kw):
    base = dict(
        lr=1e-4,
        batch_size=8,
        max_epochs=2,
        plateau_patience=2,
        augment_enabled=False,
        dtype="float64",
        seed=11,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_lr_zero_leaves_parameters_unchanged():
    records = small_cohort(8)
    assignment = assignment_for(records)
    spec = siamese_spec(GEOM.vb_shape)
    reference = Network(spec, seed=11)
    model, history, _ = train_siamese(records, assignment, spec, fast_cfg(lr=0.0))
    assert len(history.rows) == 2
    for p, q in zip(model.params(), reference.params()):
        assert np.array_equal(p.data, q.data), p.name


def test_training_replay_is_bitwise_deterministic():
    records = small_cohort(8)
    assignment = assignment_for(records)
    spec = siamese_spec(GEOM.vb_shape)
    cfg = fast_cfg(lr=1e-4, augment_enabled=True, max_epochs=2)
    aug = AugmentConfig(rotate_deg=5, shift_x=2, shift_y=2, shift_slices=1,
                        scale_low=0.95, scale_high=1.05, intensity_delta=0.1, flip=True)
    m1, h1, _ = train_siamese(records, assignment, spec, cfg, aug_cfg=aug)
    m2, h2, _ = train_siamese(records, assignment, spec, cfg, aug_cfg=aug)
    for p, q in zip(m1.params(), m2.params()):
        assert np.array_equal(p.data, q.data), p.name
    assert [r.train_loss for r in h1.rows] == [r.train_loss for r in h2.rows]
    assert [r.val_loss for r in h1.rows] == [r.val_loss for r in h2.rows]


def test_different_seed_changes_training():
    records = small_cohort(8)
    assignment = assignment_for(records)
    spec = siamese_spec(GEOM.vb_shape)
    m1, _, _ = train_siamese(records, assignment, spec, fast_cfg(seed=11, max_epochs=1))
    m2, _, _ = train_siamese(records, assignment, spec, fast_cfg(seed=12, max_epochs=1))
    assert any(not np.array_equal(p.data, q.data) for p, q in zip(m1.params(), m2.params()))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_last_good_state():
    records = small_cohort(8)
    assignment = assignment_for(records)
    spec = siamese_spec(GEOM.vb_shape)
    with pytest.raises(DivergenceError) as err:
        train_siamese(records, assignment, spec, fast_cfg(lr=1e12, max_epochs=30))
    state = err.value.last_good_state
    assert state and all(np.all(np.isfinite(v)) for v in state.values())


def test_history_csv_round_trip(tmp_path):
    records = small_cohort(8)
    assignment = assignment_for(records)
    spec = siamese_spec(GEOM.vb_shape)
    _, history, _ = train_siamese(records, assignment, spec, fast_cfg())
    path = tmp_path / "history.csv"
    history.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr,aux_accuracy"
    assert len(lines) == len(history.rows) + 1
    cells = lines[1].split(",")
    assert int(cells[0]) == 1
    assert float(cells[1]) == history.rows[0].train_loss
