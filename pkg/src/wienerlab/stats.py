"""Monte Carlo estimates with standard errors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with standard error ``sd / sqrt(n)``.

    ``exact`` marks expectations computed by full enumeration of a tree
    measure; those carry ``stderr = 0``.
    """

    mean: float
    stderr: float
    n_samples: int
    exact: bool = False

    def __post_init__(self):
        if self.stderr < 0 or not math.isfinite(self.stderr):
            raise ValueError(f"stderr must be finite and >= 0, got {self.stderr}")
        if self.n_samples < 1 or (not self.exact and self.n_samples < 2):
            raise ValueError("need at least two samples")

    @classmethod
    def from_samples(cls, x, weights=None) -> "McEstimate":
        x = np.asarray(x, dtype=np.float64).ravel()
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64).ravel()
            return cls(float(np.dot(w, x) / w.sum()), 0.0, x.size, exact=True)
        if x.size < 2:
            raise ValueError("need at least two samples")
        return cls(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), x.size)

    def covers(self, value: float, sigmas: float = 3.0, atol: float = 1e-12) -> bool:
        return abs(self.mean - value) <= sigmas * self.stderr + atol

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_samples": self.n_samples, "exact": self.exact}

    def __str__(self):
        if self.exact:
            return f"{self.mean:.12g} (exact)"
        return f"{self.mean:.6g} +/- {self.stderr:.2g}"


def combined_stderr(*estimates: McEstimate) -> float:
    return math.sqrt(sum(e.stderr**2 for e in estimates))


def agree(a: McEstimate, b: McEstimate, sigmas: float = 3.0, atol: float = 1e-12) -> bool:
    """Two independent estimates agree within ``sigmas`` combined standard errors."""
    return abs(a.mean - b.mean) <= sigmas * combined_stderr(a, b) + atol
