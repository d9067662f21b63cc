"""Longitudinal self-supervision for volumetric spine data.

Pretrains a two-branch weight-shared convolutional network on
same-subject/different-subject vertebral-body pairs with an auxiliary
level-prediction loss, then transfers the convolutional weights to a
disc-degeneration grading classifier.  A synthetic phantom cohort stands
in for clinical data.
"""

__version__ = "0.1.0"
