"""Sensor layout on the robot surface and the stress readings they produce."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError


@dataclass(frozen=True)
class SensorArray:
    """``n`` sensors at body angles 2*pi*j/n, measured counterclockwise from the robot front."""

    n: int = 30

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two sensors")

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n) / self.n

    def supports(self, M: int) -> bool:
        return self.n >= 2 * M + 2


@dataclass(frozen=True)
class StressReading:
    """Per-sensor traction components in Pa.

    ``normal`` is positive for tension (pulling outward); ``tangential`` is
    positive counterclockwise, i.e. toward increasing sensor angle.
    """

    normal: np.ndarray
    tangential: np.ndarray
    timestamp: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        fn = np.asarray(self.normal, dtype=float)
        ft = np.asarray(self.tangential, dtype=float)
        if fn.shape != ft.shape or fn.ndim != 1:
            raise ValueError("normal and tangential must be 1-D arrays of equal length")
        if not (np.isfinite(fn).all() and np.isfinite(ft).all()):
            raise DegenerateInputError("stress reading contains non-finite values")
        object.__setattr__(self, "normal", fn)
        object.__setattr__(self, "tangential", ft)

    @property
    def n(self) -> int:
        return len(self.normal)

    def gauge_normalized(self) -> "StressReading":
        """Subtract the mean normal stress so the normal components sum to zero."""
        fn = self.normal - self.normal.mean()
        fn -= fn.sum() / fn.size  # second pass removes rounding residue
        return StressReading(fn, self.tangential.copy(), self.timestamp, dict(self.meta))

    def scaled(self, c: float) -> "StressReading":
        return StressReading(self.normal * c, self.tangential * c, self.timestamp, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "normal": self.normal.tolist(),
            "tangential": self.tangential.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StressReading":
        return cls(np.asarray(data["normal"], float), np.asarray(data["tangential"], float), float(data.get("timestamp", 0.0)))
