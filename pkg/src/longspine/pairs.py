"""Subject-disjoint splits and level-matched pair generation.

Positive pairs are the same vertebral level of the same subject at two
different scan times; negatives pair the same level across two different
subjects.  Twin groups are assigned to a split atomically so related
subjects can never straddle train and test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import ScanRecord, group_by_subject
from .volumes import VB_LEVELS, DataError

SPLIT_NAMES = ("train", "validation", "test")


class SamplingError(ValueError):
    """Raised when a split cannot support the requested pair protocol."""


@dataclass(frozen=True)
class VolumeRef:
    """Pointer to one vertebral-body volume inside a dataset, carrying the
    split tag so downstream code can assert it never crosses splits."""

    subject_id: str
    scan_time: float
    level: str
    split: str = ""


@dataclass(frozen=True)
class Pair:
    a: VolumeRef
    b: VolumeRef
    level: str
    label: int  # 1 = same subject, 0 = different subjects

    def check(self):
        if self.a.level != self.level or self.b.level != self.level:
            raise DataError(f"pair is not level-matched: {self.a.level} / {self.b.level} vs {self.level}")
        if self.label == 1:
            if self.a.subject_id != self.b.subject_id:
                raise DataError("positive pair must share a subject")
            if self.a.scan_time == self.b.scan_time:
                raise DataError("positive pair must come from two different scan times")
        elif self.label == 0:
            if self.a.subject_id == self.b.subject_id:
                raise DataError("negative pair must come from different subjects")
        else:
            raise DataError(f"label must be 0 or 1, got {self.label}")


@dataclass
class SplitAssignment:
    assignment: dict[str, str]  # subject_id -> split name

    def subjects(self, split: str) -> list[str]:
        return sorted(s for s, name in self.assignment.items() if name == split)

    def of(self, subject_id: str) -> str:
        return self.assignment[subject_id]


def largest_remainder(total: int, ratios) -> list[int]:
    """Integer apportionment of `total` by `ratios` (largest remainder,
    ties to the earlier entry)."""
    exact = [total * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    leftover = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_subjects(
    subjects: list[str],
    twin_groups: list[list[str]],
    ratios: tuple[float, float, float],
    rng: np.random.Generator,
) -> SplitAssignment:
    """Assign subjects to train/validation/test; twin groups move as one
    unit.  Quotas are computed on unit counts by largest remainder."""
    if not subjects:
        raise SamplingError("cannot split an empty subject list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SamplingError(f"split ratios must sum to 1, got {ratios}")
    subject_set = set(subjects)
    if len(subject_set) != len(subjects):
        raise SamplingError("duplicate subject ids")

    grouped: set[str] = set()
    units: list[tuple[str, ...]] = []
    for group in twin_groups:
        members = tuple(sorted(group))
        for m in members:
            if m in grouped:
                raise SamplingError(f"subject {m} appears in more than one twin group")
            if m not in subject_set:
                raise SamplingError(f"twin group member {m} is not in the subject list")
            grouped.add(m)
        units.append(members)
    units.extend((s,) for s in sorted(subject_set - grouped))
    units.sort()

    order = rng.permutation(len(units))
    quotas = largest_remainder(len(units), ratios)
    assignment: dict[str, str] = {}
    cursor = 0
    for split, quota in zip(SPLIT_NAMES, quotas):
        for k in range(quota):
            for member in units[order[cursor + k]]:
                assignment[member] = split
        cursor += quota
    return SplitAssignment(assignment)


def vb_refs(record: ScanRecord, split: str) -> list[VolumeRef]:
    return [
        VolumeRef(record.subject_id, record.scan_time, level, split)
        for level in VB_LEVELS
        if level in record.vb
    ]


def generate_pairs(
    records: list[ScanRecord],
    split: str,
    rng: np.random.Generator,
    negatives_per_positive: float = 1.0,
) -> list[Pair]:
    """All within-subject cross-time positives plus sampled level-matched
    cross-subject negatives at the requested ratio."""
    by_subject = group_by_subject(records)
    if len(by_subject) < 2:
        raise SamplingError(f"{split} split needs at least 2 subjects, got {len(by_subject)}")

    positives: list[Pair] = []
    for sid in sorted(by_subject):
        scans = by_subject[sid]
        for i in range(len(scans)):
            for j in range(i + 1, len(scans)):
                for level in VB_LEVELS:
                    if level in scans[i].vb and level in scans[j].vb:
                        positives.append(
                            Pair(
                                a=VolumeRef(sid, scans[i].scan_time, level, split),
                                b=VolumeRef(sid, scans[j].scan_time, level, split),
                                level=level,
                                label=1,
                            )
                        )
    if not positives:
        raise SamplingError(f"{split} split has no subject with two scans; cannot form positive pairs")

    # negative candidates: every (volume, volume) of one level across subjects
    refs_by_level: dict[str, list[VolumeRef]] = {level: [] for level in VB_LEVELS}
    for sid in sorted(by_subject):
        for rec in by_subject[sid]:
            for ref in vb_refs(rec, split):
                refs_by_level[ref.level].append(ref)

    n_neg = int(round(negatives_per_positive * len(positives)))
    negatives: list[Pair] = []
    seen: set[tuple] = set()
    level_names = [lvl for lvl in VB_LEVELS if len(refs_by_level[lvl]) >= 2]
    attempts = 0
    max_attempts = 200 * max(n_neg, 1)
    while len(negatives) < n_neg and attempts < max_attempts:
        attempts += 1
        level = level_names[int(rng.integers(len(level_names)))]
        pool = refs_by_level[level]
        i, j = rng.integers(len(pool)), rng.integers(len(pool))
        ra, rb = pool[int(i)], pool[int(j)]
        if ra.subject_id == rb.subject_id:
            continue
        key = tuple(sorted([(ra.subject_id, ra.scan_time, level), (rb.subject_id, rb.scan_time, level)]))
        if key in seen:
            continue
        seen.add(key)
        negatives.append(Pair(a=ra, b=rb, level=level, label=0))
    if len(negatives) < n_neg:
        raise SamplingError(
            f"could only sample {len(negatives)} distinct negatives of {n_neg} requested in {split}"
        )
    return positives + negatives


def all_test_pairs(records: list[ScanRecord], split: str) -> list[Pair]:
    """Every level-matched pair in a split (used for verification metrics)."""
    by_subject = group_by_subject(records)
    refs_by_level: dict[str, list[VolumeRef]] = {level: [] for level in VB_LEVELS}
    for sid in sorted(by_subject):
        for rec in by_subject[sid]:
            for ref in vb_refs(rec, split):
                refs_by_level[ref.level].append(ref)
    pairs: list[Pair] = []
    for level in VB_LEVELS:
        pool = refs_by_level[level]
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                ra, rb = pool[i], pool[j]
                if ra.subject_id == rb.subject_id:
                    if ra.scan_time == rb.scan_time:
                        continue
                    pairs.append(Pair(ra, rb, level, 1))
                else:
                    pairs.append(Pair(ra, rb, level, 0))
    return pairs


def validate_pairs(pairs: list[Pair], expected_split: str | None = None) -> None:
    """Standalone validator: type invariants plus split-tag consistency."""
    for p in pairs:
        p.check()
        if expected_split is not None:
            if p.a.split != expected_split or p.b.split != expected_split:
                raise DataError(
                    f"pair crosses splits: {p.a.split}/{p.b.split}, expected {expected_split}"
                )


def epoch_batches(pairs: list[Pair], batch_size: int, rng: np.random.Generator) -> list[list[Pair]]:
    """Shuffle and chunk; the final short batch is kept."""
    if batch_size < 1:
        raise SamplingError(f"batch size must be >= 1, got {batch_size}")
    order = rng.permutation(len(pairs))
    shuffled = [pairs[int(i)] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def export_pairs_jsonl(pairs: list[Pair], path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "subject_a": p.a.subject_id,
                        "time_a": p.a.scan_time,
                        "subject_b": p.b.subject_id,
                        "time_b": p.b.scan_time,
                        "level": p.level,
                        "label": p.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
