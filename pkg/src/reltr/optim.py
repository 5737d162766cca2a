"""Plain SGD and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .tensor import Tensor


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """In-place ``p <- p - lr * grad`` for every parameter holding a gradient."""
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad


@dataclass
class PlateauState:
    learning_rate: float = 1e-3
    patience: int = 3
    decay_factor: float = 0.1
    mode: str = "min"
    plateau_counter: int = 0
    best_metric: float = math.nan

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.mode not in ("min", "max"):
            raise ValueError(f"mode must be 'min' or 'max', got {self.mode!r}")


def _improves(metric: float, best: float, mode: str) -> bool:
    if math.isnan(best):
        return True
    return metric < best if mode == "min" else metric > best


def plateau_update(state: PlateauState, metric: float) -> float:
    """Record one validation metric and return the (possibly reduced) learning rate.

    The rate decays once the metric has failed to improve on the best value for
    ``patience + 1`` consecutive calls; the counter then restarts at zero.
    """
    if not math.isfinite(metric):
        raise ValueError(f"plateau metric must be finite, got {metric}")
    if _improves(metric, state.best_metric, state.mode):
        state.best_metric = metric
        state.plateau_counter = 0
    else:
        state.plateau_counter += 1
        if state.plateau_counter > state.patience:
            state.learning_rate *= state.decay_factor
            state.plateau_counter = 0
    return state.learning_rate
