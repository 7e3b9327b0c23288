"""Exponential clamp-quantile schedule over training epochs.

Training wants a small clamp quantile early (lower quantization error,
faster sign movement) and a large one late (higher weight entropy, stable
accuracy). The schedule interpolates exponentially from tau_start to
tau_end:

    tau_i = (tau_end - tau_start) / (e - 1) * e^(i / I)
          + (e * tau_start - tau_end) / (e - 1)

which hits tau_start at i = 0 and tau_end at i = I exactly (the constant
terms cancel algebraically at both endpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class TauSchedule:
    """Endpoints and epoch count; constant when the endpoints coincide."""

    tau_start: float = 0.85
    tau_end: float = 0.99
    total_epochs: int = 1

    def __post_init__(self):
        for name, value in (("tau_start", self.tau_start), ("tau_end", self.tau_end)):
            if not 0.5 < value <= 1.0:
                raise ValueError(f"{name} must be in (0.5, 1], got {value}")
        if self.tau_start > self.tau_end:
            raise ValueError(f"tau_start must not exceed tau_end, got "
                             f"{self.tau_start} > {self.tau_end}")
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be positive, got {self.total_epochs}")


def tau_at(schedule: TauSchedule, epoch: int) -> float:
    """Scheduled quantile at an epoch index in [0, total_epochs]."""
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    span = math.e - 1.0
    growth = (schedule.tau_end - schedule.tau_start) / span
    offset = (math.e * schedule.tau_start - schedule.tau_end) / span
    return growth * math.exp(epoch / schedule.total_epochs) + offset
