"""Trajectory container shared by the deterministic and stochastic solvers."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sampling import PathGrid


@dataclass(frozen=True)
class Trajectory:
    """Solution on the grid [-r, T].

    states[k] is x at grid point k (history included, oldest first);
    head[j] is v(t_j) = x(t_j) - D x_{t_j} for t_j >= 0 (None for runs that
    do not track it).  delay_slots = r/dt, so states[k - delay_slots .. k]
    is the segment x_{t_k} for any k >= delay_slots.
    """
    grid: PathGrid
    states: np.ndarray                  # (n_total + 1, N)
    head: Optional[np.ndarray]          # (n_forward + 1, N) or None
    seed: Optional[int]
    kernel_id: Optional[tuple]
    delay_slots: int

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def segment_at(self, k_forward: int) -> np.ndarray:
        """Segment x_{t_k} (delay_slots + 1 rows) for forward index k."""
        k = self.delay_slots + k_forward
        return self.states[k - self.delay_slots:k + 1]

    def forward_states(self) -> np.ndarray:
        """x on [0, T] only."""
        return self.states[self.delay_slots:]

    def to_csv(self) -> str:
        """Columns t, coord, x, head (head blank where not tracked)."""
        buf = io.StringIO()
        buf.write("t,coord,x,head\n")
        t = self.times
        m = self.delay_slots
        for k in range(len(t)):
            for c in range(self.states.shape[1]):
                h = ""
                if self.head is not None and k >= m:
                    h = f"{self.head[k - m, c]:.12g}"
                buf.write(f"{t[k]:.12g},{c},{self.states[k, c]:.12g},{h}\n")
        return buf.getvalue()
