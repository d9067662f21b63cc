"""Contrastive margin loss and class-balanced weights.

For embeddings a, b with d = ||a - b||_2 the per-pair loss is
d^2 for a same-subject pair and max(0, m - d)^2 otherwise.
"""

from __future__ import annotations

import numpy as np

from .ops import ShapeError


def contrastive_loss(a: np.ndarray, b: np.ndarray, y: int, margin: float):
    """Single-pair loss and gradients w.r.t. both embeddings."""
    loss, da, db = contrastive_loss_batch(
        np.asarray(a, dtype=np.float64)[None],
        np.asarray(b, dtype=np.float64)[None],
        np.array([y]),
        margin,
    )
    return loss, da[0], db[0]


def contrastive_loss_batch(a: np.ndarray, b: np.ndarray, y: np.ndarray, margin: float):
    """Sum over a batch of pairs; returns (loss, dL/da, dL/db).

    Gradient of the negative branch at d = 0 is defined as zero (there is
    no descent direction for coincident embeddings).
    """
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    if a.shape != b.shape:
        raise ShapeError(f"embedding widths differ: {a.shape} vs {b.shape}")
    y = np.asarray(y)
    diff = a - b
    d = np.sqrt((diff**2).sum(axis=1))
    pos = y == 1

    hinge = np.maximum(0.0, margin - d)
    loss = float((d[pos] ** 2).sum() + (hinge[~pos] ** 2).sum())

    da = np.zeros_like(a)
    da[pos] = 2.0 * diff[pos]
    neg_active = (~pos) & (hinge > 0) & (d > 0)
    scale = np.zeros_like(d)
    scale[neg_active] = -2.0 * hinge[neg_active] / d[neg_active]
    da[~pos] = scale[~pos, None] * diff[~pos]
    return loss, da, -da


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency weights normalised to mean 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("counts must be a nonempty vector")
    if (counts <= 0).any():
        bad = int(np.nonzero(counts <= 0)[0][0])
        raise ValueError(f"class {bad} has no samples; cannot weight it")
    w = 1.0 / counts
    return w / w.mean()
