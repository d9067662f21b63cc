import numpy as np
import pytest

from longspine.dataio import ScanRecord
from longspine.pairs import (
    Pair,
    SamplingError,
    VolumeRef,
    all_test_pairs,
    epoch_batches,
    generate_pairs,
    largest_remainder,
    split_subjects,
    validate_pairs,
)
from longspine.volumes import ANATOMY_VB, VB_LEVELS, DataError, Volume


def scan(subject, t, levels=VB_LEVELS):
    vols = {lvl: Volume(np.zeros((4, 4, 3)), ANATOMY_VB, lvl) for lvl in levels}
    return ScanRecord(subject_id=subject, scan_time=t, scanner_tag="1.0T", vb=vols)


# -- splits --------------------------------------------------------------------


def test_largest_remainder_423():
    assert largest_remainder(423, (0.8, 0.1, 0.1)) == [339, 42, 42]


def test_split_423_subjects_matches_published_counts():
    subjects = [f"S{i}" for i in range(423)]
    a = split_subjects(subjects, [], (0.8, 0.1, 0.1), np.random.default_rng(0))
    assert len(a.subjects("train")) == 339
    assert len(a.subjects("validation")) == 42
    assert len(a.subjects("test")) == 42


def test_split_ten_singletons():
    subjects = [f"S{i}" for i in range(10)]
    a = split_subjects(subjects, [], (0.8, 0.1, 0.1), np.random.default_rng(3))
    assert len(a.subjects("train")) == 8
    assert len(a.subjects("validation")) == 1
    assert len(a.subjects("test")) == 1


def test_split_is_partition_and_deterministic():
    subjects = [f"S{i}" for i in range(57)]
    a = split_subjects(subjects, [], (0.8, 0.1, 0.1), np.random.default_rng(9))
    b = split_subjects(subjects, [], (0.8, 0.1, 0.1), np.random.default_rng(9))
    assert a.assignment == b.assignment
    assert sorted(a.assignment) == sorted(subjects)
    assert set(a.assignment.values()) <= {"train", "validation", "test"}


def test_twins_always_colocated_across_seeds():
    subjects = ["A", "A2", "B", "C", "D", "E", "F", "G", "H", "I"]
    for seed in range(100):
        a = split_subjects(subjects, [["A", "A2"]], (0.8, 0.1, 0.1), np.random.default_rng(seed))
        assert a.of("A") == a.of("A2")


def test_split_rejects_bad_input():
    with pytest.raises(SamplingError):
        split_subjects([], [], (0.8, 0.1, 0.1), np.random.default_rng(0))
    with pytest.raises(SamplingError):
        split_subjects(["A"], [], (0.5, 0.2, 0.2), np.random.default_rng(0))
    with pytest.raises(SamplingError):
        split_subjects(["A", "B"], [["A", "Z"]], (0.8, 0.1, 0.1), np.random.default_rng(0))


# -- pair generation -------------------------------------------------------------


def test_one_subject_two_scans_gives_seven_positives():
    records = [scan("A", 0.0), scan("A", 10.0), scan("B", 0.0)]
    pairs = generate_pairs(records, "train", np.random.default_rng(0), negatives_per_positive=0.0)
    positives = [p for p in pairs if p.label == 1]
    assert len(positives) == 7
    assert {p.level for p in positives} == set(VB_LEVELS)


def test_three_scans_give_all_combinations():
    records = [scan("A", 0.0), scan("A", 8.0), scan("A", 11.0), scan("B", 0.0)]
    pairs = generate_pairs(records, "train", np.random.default_rng(0), negatives_per_positive=0.0)
    assert len([p for p in pairs if p.label == 1]) == 21  # C(3,2) x 7 levels


def test_negatives_balanced_and_level_matched():
    records = []
    for i in range(10):
        records.append(scan(f"S{i}", 0.0))
        records.append(scan(f"S{i}", 9.0))
    pairs = generate_pairs(records, "train", np.random.default_rng(5), negatives_per_positive=1.0)
    positives = [p for p in pairs if p.label == 1]
    negatives = [p for p in pairs if p.label == 0]
    assert len(positives) == len(negatives) == 70
    validate_pairs(pairs, "train")
    # no duplicate unordered pairs
    keys = set()
    for p in negatives:
        key = tuple(sorted([(p.a.subject_id, p.a.scan_time), (p.b.subject_id, p.b.scan_time)])) + (p.level,)
        assert key not in keys
        keys.add(key)


def test_rejects_split_without_longitudinal_subject():
    records = [scan("A", 0.0), scan("B", 0.0)]
    with pytest.raises(SamplingError, match="two scans"):
        generate_pairs(records, "validation", np.random.default_rng(0))


def test_pair_invariant_checks():
    ra = VolumeRef("A", 0.0, "L1", "train")
    rb = VolumeRef("A", 9.0, "L1", "train")
    Pair(ra, rb, "L1", 1).check()
    with pytest.raises(DataError):
        Pair(ra, rb, "L1", 0).check()  # negative needs different subjects
    with pytest.raises(DataError):
        Pair(ra, VolumeRef("A", 0.0, "L1", "train"), "L1", 1).check()  # same time
    with pytest.raises(DataError):
        Pair(ra, VolumeRef("B", 0.0, "L2", "train"), "L1", 0).check()  # level mismatch
    with pytest.raises(DataError):
        validate_pairs([Pair(ra, VolumeRef("B", 0.0, "L1", "test"), "L1", 0)], "train")


def test_all_test_pairs_counts():
    records = [scan("A", 0.0), scan("A", 10.0), scan("B", 0.0)]
    pairs = all_test_pairs(records, "test")
    # per level: C(3,2)=3 pairs, 1 positive (A-A) + 2 negatives
    assert len(pairs) == 21
    assert sum(p.label for p in pairs) == 7
    validate_pairs(pairs, "test")


# -- batching ---------------------------------------------------------------------


def _dummy_pairs(n):
    out = []
    for i in range(n):
        out.append(
            Pair(
                VolumeRef(f"S{i}", 0.0, "L1", "train"),
                VolumeRef(f"S{i}", 9.0, "L1", "train"),
                "L1",
                1,
            )
        )
    return out


def test_epoch_batches_covers_exactly_once():
    pairs = _dummy_pairs(64)
    batches = epoch_batches(pairs, 32, np.random.default_rng(0))
    assert [len(b) for b in batches] == [32, 32]
    seen = [p.a.subject_id for b in batches for p in b]
    assert sorted(seen) == sorted(p.a.subject_id for p in pairs)


def test_epoch_batches_keeps_short_tail():
    batches = epoch_batches(_dummy_pairs(33), 32, np.random.default_rng(1))
    assert [len(b) for b in batches] == [32, 1]


def test_epoch_batches_deterministic_given_seed():
    pairs = _dummy_pairs(50)
    a = epoch_batches(pairs, 8, np.random.default_rng(42))
    b = epoch_batches(pairs, 8, np.random.default_rng(42))
    assert [[p.a.subject_id for p in batch] for batch in a] == [[p.a.subject_id for p in batch] for batch in b]


def test_epoch_batches_rejects_bad_batch_size():
    with pytest.raises(SamplingError):
        epoch_batches(_dummy_pairs(4), 0, np.random.default_rng(0))
