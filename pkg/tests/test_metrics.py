import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longspine.metrics import (
    MetricError,
    MetricsReport,
    avg_class_accuracy,
    confusion_matrix,
    distance_histogram,
    pair_distance,
    roc_auc,
    spearman_rho,
)


def brute_force_auc(scores, labels):
    """O(n^2) rank statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


# -- pair distance ---------------------------------------------------------------


def test_pair_distance_zero_and_pythagoras():
    assert pair_distance(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert pair_distance(np.array([3.0, 4.0]), np.zeros(2)) == 5.0


def test_pair_distance_rejects_width_mismatch():
    with pytest.raises(MetricError):
        pair_distance(np.zeros(2), np.zeros(3))


# -- roc / auc --------------------------------------------------------------------


def test_auc_perfect_separation():
    auc, _ = roc_auc([0.9, 0.8, 0.4, 0.2], [1, 1, 0, 0])
    assert auc == 1.0


def test_auc_inverted():
    auc, _ = roc_auc([0.6, 0.4], [0, 1])
    assert auc == 0.0


def test_auc_tie_convention():
    auc, _ = roc_auc([0.5, 0.5], [1, 0])
    assert auc == 0.5


def test_auc_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n = int(rng.integers(4, 40))
        # coarse grid forces ties
        scores = rng.integers(0, 6, size=n).astype(float) / 5.0
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        auc, _ = roc_auc(scores, labels)
        assert auc == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


def test_roc_endpoints_and_monotonicity():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=60)
    labels = (rng.uniform(size=60) < 0.4).astype(int)
    labels[0], labels[1] = 0, 1
    _, points = roc_auc(scores, labels)
    assert points[0] == (0.0, 0.0)
    assert points[-1] == (1.0, 1.0)
    fprs = [p[0] for p in points]
    tprs = [p[1] for p in points]
    assert all(a <= b + 1e-12 for a, b in zip(fprs, fprs[1:]))
    assert all(a <= b + 1e-12 for a, b in zip(tprs, tprs[1:]))


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=80)
    labels = (rng.uniform(size=80) < 0.5).astype(int)
    labels[:2] = [0, 1]
    base, _ = roc_auc(scores, labels)
    for f in (lambda s: 3 * s + 7, np.tanh, lambda s: np.exp(s / 4)):
        transformed, _ = roc_auc(f(scores), labels)
        assert transformed == pytest.approx(base, abs=1e-12)


def test_auc_rejects_single_class():
    with pytest.raises(MetricError):
        roc_auc([0.1, 0.2], [1, 1])


# -- confusion / average class accuracy ---------------------------------------------


def test_avg_class_accuracy_identity():
    assert avg_class_accuracy(np.eye(4) * 5) == 1.0


def test_avg_class_accuracy_example():
    assert avg_class_accuracy([[8, 2], [4, 6]]) == pytest.approx(0.7)


def test_avg_class_accuracy_equals_per_sample_recall_mean():
    rng = np.random.default_rng(3)
    y_true = rng.integers(0, 4, size=300)
    y_pred = rng.integers(0, 4, size=300)
    cm = confusion_matrix(y_true, y_pred, 4)
    recalls = [np.mean(y_pred[y_true == c] == c) for c in range(4)]
    assert avg_class_accuracy(cm) == pytest.approx(np.mean(recalls))


@given(st.integers(0, 3), st.integers(2, 5))
@settings(max_examples=30, deadline=None)
def test_avg_class_accuracy_invariant_to_class_rescaling(cls, factor):
    rng = np.random.default_rng(cls * 7 + factor)
    cm = rng.integers(1, 9, size=(4, 4))
    scaled = cm.copy()
    scaled[cls] *= factor  # duplicate every sample of one true class
    assert avg_class_accuracy(scaled) == pytest.approx(avg_class_accuracy(cm))


def test_avg_class_accuracy_rejects_empty_row():
    with pytest.raises(MetricError, match="class 1"):
        avg_class_accuracy([[3, 0], [0, 0]])


# -- histogram / spearman -------------------------------------------------------------


def test_histogram_all_identical_pairs_in_first_bin():
    h = distance_histogram(np.zeros(10), np.ones(10, dtype=int), bins=5)
    assert h["positive_counts"][0] == 10
    assert sum(h["positive_counts"]) + sum(h["negative_counts"]) == 10


def test_histogram_counts_sum_to_pair_count():
    rng = np.random.default_rng(4)
    d = rng.uniform(0, 3, size=50)
    labels = rng.integers(0, 2, size=50)
    h = distance_histogram(d, labels, bins=8)
    assert sum(h["positive_counts"]) + sum(h["negative_counts"]) == 50
    assert len(h["edges"]) == 9


def test_spearman_signs():
    assert spearman_rho([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman_rho([1, 2, 3], [30, 20, 10]) == pytest.approx(-1.0)
    assert spearman_rho([1, 2, 3], [5, 5, 5]) == 0.0


def test_report_round_trip(tmp_path):
    rep = MetricsReport(
        auc=0.93,
        roc_points=[(0.0, 0.0), (1.0, 1.0)],
        confusion=[[3, 1], [0, 4]],
        avg_class_accuracy=0.875,
        per_class_counts=[4, 4],
        histogram={"edges": [0, 1], "positive_counts": [2], "negative_counts": [1]},
        extra={"note": "x"},
    )
    rep.save(tmp_path / "r.json")
    back = MetricsReport.load(tmp_path / "r.json")
    assert back.auc == rep.auc
    assert back.roc_points == rep.roc_points
    assert back.confusion == rep.confusion
    assert back.extra == rep.extra
