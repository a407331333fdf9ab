"""Finite-support tree surrogates of discretized Wiener measure.

Each step draws its increment from a small set of atoms with mean 0 and
variance dt_k. Enumerating every combination gives exact expectations, in
particular exact conditional expectations given the transformed history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import TimeGrid
from .paths import SamplePath, path_from_increments

DEFAULT_CAP = 2_000_000


class TreeCapError(ValueError):
    """Raised when a tree would enumerate more paths than allowed."""


def standard_atoms(branching: str, m: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Atoms and probabilities of a unit-variance one-step law."""
    if branching == "rademacher":
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    if branching == "gauss_hermite":
        if m is None or m < 2:
            raise ValueError("gauss_hermite branching needs m >= 2 nodes")
        nodes, w = np.polynomial.hermite_e.hermegauss(m)
        w = w / w.sum()
        # symmetrize against round-off so the odd moments vanish
        nodes = 0.5 * (nodes - nodes[::-1])
        w = 0.5 * (w + w[::-1])
        return nodes, w
    raise ValueError(f"unknown branching {branching!r}")


@dataclass(frozen=True, eq=False)
class TreeModel:
    grid: TimeGrid
    branching: str = "rademacher"
    m: int | None = None
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        standard_atoms(self.branching, self.m)

    @property
    def factor(self) -> int:
        return 2 if self.branching == "rademacher" else int(self.m)

    @property
    def path_count(self) -> int:
        return self.factor**self.grid.n

    def step_atoms(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        z, p = standard_atoms(self.branching, self.m)
        return z * np.sqrt(self.grid.dt[k]), p

    def label(self) -> str:
        return "rademacher" if self.branching == "rademacher" else f"gauss_hermite({self.m})"


def enumerate_tree(model: TreeModel, dim: int = 1) -> SamplePath:
    """All paths of the tree with their probabilities.

    Path index ``i`` written in base ``factor`` (step 0 most significant)
    lists the atom chosen at each step.
    """
    if dim != 1:
        raise ValueError("tree models are one-dimensional")
    total = model.path_count
    if total > model.cap:
        raise TreeCapError(f"tree has {model.factor}^{model.grid.n} = {total} paths, cap is {model.cap}")
    n, b = model.grid.n, model.factor
    z, p = standard_atoms(model.branching, model.m)
    digits = np.empty((total, n), dtype=np.intp)
    idx = np.arange(total)
    for k in range(n - 1, -1, -1):
        digits[:, k] = idx % b
        idx //= b
    inc = z[digits] * np.sqrt(model.grid.dt)[None, :]
    weights = np.prod(p[digits], axis=1)
    return path_from_increments(model.grid, inc[:, :, None], weights=weights)
