"""Types produced by the round simulator."""
from dataclasses import dataclass

import numpy as np

from app.errors import DimensionMismatch
from app.models.base import _frozen_array


@dataclass(frozen=True, eq=False)
class RoundTrace:
    """R simulated rounds. selections holds client indices (caller's order), one row per round."""
    straggler_times: np.ndarray
    selections: np.ndarray
    stragglers: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        for name in ('straggler_times', 'cumulative'):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        for name in ('selections', 'stragglers'):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), dtype=np.int64))
        rounds = self.straggler_times.size
        if self.selections.shape[0] != rounds or self.stragglers.size != rounds or self.cumulative.size != rounds:
            raise DimensionMismatch("round trace arrays disagree on the number of rounds")

    @property
    def rounds(self) -> int:
        return self.straggler_times.size

    @property
    def wallclock(self) -> float:
        return float(self.cumulative[-1]) if self.rounds else 0.0
