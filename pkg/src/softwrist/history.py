"""Fixed-length, zero-padded observation history."""

from __future__ import annotations

import numpy as np


class HistoryBuffer:
    """The last ``length`` observations, oldest first, zero rows before the episode start."""

    def __init__(self, length: int = 20, width: int = 6):
        self.length = int(length)
        self.width = int(width)
        self.data = np.zeros((self.length, self.width))
        self.count = 0

    def reset(self) -> None:
        self.data[:] = 0.0
        self.count = 0

    def push(self, obs) -> None:
        obs = np.asarray(obs, dtype=float).reshape(self.width)
        self.data[:-1] = self.data[1:]
        self.data[-1] = obs
        self.count += 1

    def array(self) -> np.ndarray:
        return self.data.copy()
