"""Reproducible desk-scale experiment presets.

Two configurations every script and the acceptance suite share: a
pretraining run on a 60-subject longitudinal cohort and a transfer /
learning-curve run on a 200-subject graded cohort.  All seeds are pinned.
"""

from __future__ import annotations

import dataclasses

from .augment import AugmentConfig
from .config import ExperimentConfig, Seeds
from .synth import GeneratorConfig
from .train import TrainConfig


def desk_pretrain_config() -> ExperimentConfig:
    """60 subjects, half with follow-up scans, reduced geometry.

    Augmentation ranges are gentler than the full-size defaults: on a
    56-pixel canvas the full rotation range swamps the per-level geometry,
    so the desk run trades some invariance pressure for trainability.
    """
    return ExperimentConfig(
        geometry_mode="reduced",
        generator=GeneratorConfig(subjects=60, followup_fraction=0.5),
        augment=AugmentConfig(
            rotate_deg=5.0,
            shift_x=32,
            shift_y=16,
            shift_slices=2,
            scale_low=0.95,
            scale_high=1.05,
            intensity_delta=0.2,
            flip=True,
        ),
        siamese=TrainConfig(
            margin=1.0,
            beta=0.5,
            batch_size=32,
            lr=3e-4,
            momentum=0.9,
            weight_decay=0.0005,
            plateau_patience=10,
            lr_drop_factor=10.0,
            max_lr_drops=2,
            max_epochs=60,
            negatives_per_positive=1.5,
            dtype="float32",
            augment_enabled=True,
            validation_metric="joint_error",
            restore_best=True,
        ),
        split_ratios=(0.8, 0.1, 0.1),
        seeds=Seeds(generator=1, split=2, init=3, epoch=4),
    )


def desk_transfer_config() -> ExperimentConfig:
    """200 graded subjects; the paper-shaped 0.42 follow-up fraction keeps
    multi-scan subjects confined to the training pool."""
    return ExperimentConfig(
        geometry_mode="reduced",
        generator=GeneratorConfig(subjects=200, followup_fraction=0.42),
        classifier=TrainConfig(
            batch_size=64,
            lr=1e-3,
            momentum=0.9,
            weight_decay=0.0005,
            plateau_patience=4,
            lr_drop_factor=10.0,
            max_lr_drops=2,
            max_epochs=25,
            dtype="float32",
            augment_enabled=False,
        ),
        grading_ratios=(0.729, 0.054, 0.217),
        curve_fractions=(0.36, 0.54, 1.0),
        curve_repetitions=3,
        seeds=Seeds(generator=21, split=22, init=23, epoch=24),
    )
