"""Time partitions of the unit horizon [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRID_KINDS = ("uniform", "geometric", "explicit")


class GridError(ValueError):
    """Raised for an invalid partition or incompatible grid."""


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing partition 0 = t_0 < ... < t_n = 1.

    ``kind`` records how the grid was built; ``ratio`` and ``k_max`` are
    only meaningful for geometric grids.
    """

    points: np.ndarray
    kind: str = "explicit"
    ratio: float | None = None
    k_max: int | None = None
    _dt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise GridError("a grid needs at least two points (n >= 1)")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise GridError(f"grid must start at 0 and end at 1, got [{pts[0]!r}, {pts[-1]!r}]")
        dt = np.diff(pts)
        if np.any(dt <= 0.0):
            k = int(np.argmax(dt <= 0.0))
            raise GridError(f"grid points not strictly increasing at index {k + 1}")
        pts.setflags(write=False)
        dt.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_dt", dt)

    @property
    def n(self) -> int:
        return self.points.size - 1

    @property
    def dt(self) -> np.ndarray:
        return self._dt

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        """Index of grid time ``t``; raises GridError if ``t`` is not a grid point."""
        k = int(np.argmin(np.abs(self.points - t)))
        if abs(self.points[k] - t) > atol:
            raise GridError(f"time {t!r} is not a grid point")
        return k

    def contains(self, t: float, atol: float = 1e-12) -> bool:
        return bool(np.min(np.abs(self.points - t)) <= atol)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash(self.points.tobytes())

    def summary(self) -> dict:
        out = {"kind": self.kind, "n": self.n, "dt_min": float(self.dt.min()), "dt_max": float(self.dt.max())}
        if self.kind == "geometric":
            out["ratio"] = self.ratio
            out["k_max"] = self.k_max
        return out

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "points": [float(t) for t in self.points]}
        if self.kind == "geometric":
            out["ratio"] = self.ratio
            out["k_max"] = self.k_max
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TimeGrid":
        return cls(
            np.asarray(data["points"], dtype=np.float64),
            kind=data.get("kind", "explicit"),
            ratio=data.get("ratio"),
            k_max=data.get("k_max"),
        )


def geometric_breakpoints(ratio: float, k_max: int) -> np.ndarray:
    """Breakpoints ratio**k for k = k_max, ..., 1, 0, increasing."""
    return np.array([ratio**k for k in range(k_max, -1, -1)], dtype=np.float64)


def _allocate_steps(lengths: np.ndarray, n: int) -> np.ndarray:
    # largest-remainder allocation, at least one step per block
    raw = lengths / lengths.sum() * n
    counts = np.maximum(np.floor(raw).astype(int), 1)
    while counts.sum() > n:
        over = np.where(counts > 1)[0]
        j = over[np.argmin((raw - counts)[over])]
        counts[j] -= 1
    rem = raw - counts
    while counts.sum() < n:
        j = int(np.argmax(rem))
        counts[j] += 1
        rem[j] -= 1.0
    return counts


def make_grid(n: int | None = None, kind: str = "uniform", *, ratio: float | None = None,
              k_max: int | None = None, points=None) -> TimeGrid:
    """Build a TimeGrid.

    * ``uniform``: ``n`` equal steps.
    * ``geometric``: contains every breakpoint ``ratio**k`` for k <= k_max.
      If ``n`` is omitted the grid is exactly ``{0, ratio**k_max, ..., ratio, 1}``;
      otherwise ``n >= k_max + 1`` steps are spread over the blocks in
      proportion to their lengths (uniform substeps inside each block).
    * ``explicit``: the given ``points``.

    >>> make_grid(4).points.tolist()
    [0.0, 0.25, 0.5, 0.75, 1.0]
    """
    if kind == "uniform":
        if n is None or int(n) < 1:
            raise GridError(f"uniform grid needs n >= 1, got {n!r}")
        n = int(n)
        pts = np.arange(n + 1, dtype=np.float64) / n
        return TimeGrid(pts, kind="uniform")
    if kind == "geometric":
        if ratio is None or not 0.0 < ratio < 1.0:
            raise GridError(f"geometric ratio must lie in (0, 1), got {ratio!r}")
        if k_max is None or int(k_max) < 1:
            raise GridError(f"geometric k_max must be >= 1, got {k_max!r}")
        k_max = int(k_max)
        brk = np.concatenate([[0.0], geometric_breakpoints(ratio, k_max)])
        blocks = k_max + 1
        if n is None:
            counts = np.ones(blocks, dtype=int)
        else:
            if int(n) < blocks:
                raise GridError(f"geometric grid with k_max={k_max} needs n >= {blocks}, got {n}")
            counts = _allocate_steps(np.diff(brk), int(n))
        pieces = [np.linspace(brk[j], brk[j + 1], counts[j] + 1)[:-1] for j in range(blocks)]
        pts = np.concatenate(pieces + [[1.0]])
        # pin breakpoints exactly (linspace endpoints are exact, but be explicit)
        pts[np.concatenate([[0], np.cumsum(counts)])] = brk
        return TimeGrid(pts, kind="geometric", ratio=float(ratio), k_max=k_max)
    if kind == "explicit":
        if points is None:
            raise GridError("explicit grid needs points")
        return TimeGrid(np.asarray(points, dtype=np.float64), kind="explicit")
    raise GridError(f"unknown grid kind {kind!r}; expected one of {GRID_KINDS}")
