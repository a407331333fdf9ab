"""Discretized Brownian paths, Cameron-Martin elements and path sampling.

Arrays follow one layout throughout the package:

* path values: ``(n + 1, d)`` for one path, ``(N, n + 1, d)`` for a batch;
* step derivatives (drifts, Cameron-Martin elements): ``(n, d)`` or ``(N, n, d)``,
  constant on ``[t_k, t_{k+1})``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import GridError, TimeGrid


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One path or a batch of paths on a common grid.

    ``weights`` is set for enumerated tree ensembles (probabilities summing
    to one); sampled batches leave it as ``None`` (equal weights).
    """

    grid: TimeGrid
    values: np.ndarray
    weights: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim not in (2, 3) or v.shape[-2] != self.grid.n + 1:
            raise GridError(f"values of shape {v.shape} do not fit a grid with n={self.grid.n}")
        if np.any(v[..., 0, :] != 0.0):
            raise ValueError("paths must start at 0")
        object.__setattr__(self, "values", _readonly(v))
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64)
            if v.ndim != 3 or w.shape != (v.shape[0],):
                raise ValueError("weights need a batch of matching length")
            object.__setattr__(self, "weights", _readonly(w))

    @property
    def is_batch(self) -> bool:
        return self.values.ndim == 3

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def count(self) -> int:
        return self.values.shape[0] if self.is_batch else 1

    def __len__(self):
        return self.count

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    def batched(self) -> "SamplePath":
        if self.is_batch:
            return self
        return SamplePath(self.grid, self.values[None], seed=self.seed)

    def __getitem__(self, i) -> "SamplePath":
        if not self.is_batch:
            raise TypeError("cannot index a single path")
        if isinstance(i, (int, np.integer)):
            return SamplePath(self.grid, self.values[i])
        w = None if self.weights is None else self.weights[i]
        return SamplePath(self.grid, self.values[i], weights=w, seed=self.seed)

    def prob_weights(self) -> np.ndarray:
        """Per-path probabilities (uniform for sampled batches)."""
        if self.weights is not None:
            return self.weights
        return np.full(self.count, 1.0 / self.count)


def path_from_increments(grid: TimeGrid, increments, **kw) -> SamplePath:
    inc = np.asarray(increments, dtype=np.float64)
    if inc.ndim == 1:
        inc = inc[:, None]
    pad = np.zeros(inc.shape[:-2] + (1, inc.shape[-1]))
    return SamplePath(grid, np.concatenate([pad, np.cumsum(inc, axis=-2)], axis=-2), **kw)


@dataclass(frozen=True, eq=False)
class CameronMartinPath:
    """Piecewise-linear element h of H: h(t_k) = sum_{j<k} hdot_j dt_j."""

    grid: TimeGrid
    step_derivatives: np.ndarray

    def __post_init__(self):
        s = np.array(self.step_derivatives, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[-2] != self.grid.n:
            raise GridError(f"{s.shape[-2]} step derivatives for a grid with n={self.grid.n}")
        object.__setattr__(self, "step_derivatives", _readonly(s))

    @property
    def values(self) -> np.ndarray:
        steps = self.step_derivatives * self.grid.dt[:, None]
        pad = np.zeros(steps.shape[:-2] + (1, steps.shape[-1]))
        return np.concatenate([pad, np.cumsum(steps, axis=-2)], axis=-2)

    @classmethod
    def constant(cls, grid: TimeGrid, rate=1.0, dim: int = 1) -> "CameronMartinPath":
        return cls(grid, np.broadcast_to(np.asarray(rate, dtype=np.float64), (grid.n, dim)))


def cm_norm_sq(h: CameronMartinPath) -> np.ndarray | float:
    """|h|_H^2 = sum_k |hdot_k|^2 dt_k (one value per path for batches)."""
    s = h.step_derivatives
    out = np.einsum("...kd,k->...", s * s, h.grid.dt)
    return float(out) if out.ndim == 0 else out


def cm_inner(h: CameronMartinPath, g: CameronMartinPath):
    if h.grid != g.grid:
        raise GridError("Cameron-Martin paths live on different grids")
    out = np.einsum("...kd,...kd,k->...", h.step_derivatives, g.step_derivatives, h.grid.dt)
    return float(out) if out.ndim == 0 else out


def _draw(grid: TimeGrid, dim: int, seed: int, start: int, stop: int) -> np.ndarray:
    scale = np.sqrt(grid.dt)[:, None]
    out = np.empty((stop - start, grid.n, dim))
    for j, idx in enumerate(range(start, stop)):
        # Philox is counter based: key (index, seed) gives an independent stream per path
        gen = np.random.Generator(np.random.Philox(key=np.array([idx, seed], dtype=np.uint64)))
        out[j] = gen.standard_normal((grid.n, dim))
    out *= scale
    return out


def sample_brownian(grid: TimeGrid, dim: int = 1, seed: int = 0, count: int = 1,
                    start: int = 0, threads: int = 1) -> SamplePath:
    """Sample ``count`` Brownian paths with indices ``start .. start+count-1``.

    Path ``i`` depends only on ``(seed, i)``, so results do not depend on
    ``threads`` or on how a large batch is split into chunks.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if seed < 0 or start < 0:
        raise ValueError("seed and start must be non-negative")
    threads = max(1, int(threads))
    if threads == 1 or count < 2048:
        inc = _draw(grid, dim, seed, start, start + count)
    else:
        bounds = np.linspace(start, start + count, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            parts = pool.map(lambda ab: _draw(grid, dim, seed, ab[0], ab[1]), zip(bounds[:-1], bounds[1:]))
            inc = np.concatenate(list(parts))
    return path_from_increments(grid, inc, seed=seed)
