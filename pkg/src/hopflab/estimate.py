from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["Estimate", "mean_estimate"]


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo scalar. The reported interval is value +/- (3 stderr + bias_bound)."""

    value: float
    stderr: float
    n: int
    seed: int
    bias_bound: float = 0.0

    @property
    def halfwidth(self) -> float:
        return 3.0 * self.stderr + self.bias_bound

    @property
    def interval(self):
        return self.value - self.halfwidth, self.value + self.halfwidth

    def covers(self, target: float, extra: float = 0.0) -> bool:
        return abs(self.value - target) <= self.halfwidth + extra

    def to_dict(self):
        return asdict(self)

    def __sub__(self, other):
        # independent samples only
        return Estimate(
            self.value - other.value,
            math.hypot(self.stderr, other.stderr),
            min(self.n, other.n),
            self.seed,
            self.bias_bound + other.bias_bound,
        )


def mean_estimate(samples, seed: int, bias_bound: float = 0.0) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    value = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(value, stderr, int(n), int(seed), float(bias_bound))
