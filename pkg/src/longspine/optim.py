"""SGD with velocity momentum and decoupled-into-gradient weight decay.

Update rule (fixed so training tests are deterministic):

    v <- mu * v - lr * (g + wd * w)
    w <- w + v
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import Param
from .ops import ShapeError


@dataclass
class OptimState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")


def sgd_step(params: list[Param], state: OptimState) -> OptimState:
    """Apply one update in place to every non-frozen parameter; returns state."""
    for p in params:
        if p.frozen:
            continue
        v = state.velocities.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
            state.velocities[p.name] = v
        elif v.shape != p.data.shape:
            raise ShapeError(f"velocity for {p.name} has shape {v.shape}, parameter has {p.data.shape}")
        v *= state.momentum
        v -= state.lr * (p.grad + state.weight_decay * p.data)
        p.data += v
    return state


def sgd_step_scalar(w: float, g: float, v: float, lr: float, momentum: float, weight_decay: float):
    """Single-value form of the update rule, for hand-unrolled checks."""
    v = momentum * v - lr * (g + weight_decay * w)
    return w + v, v
