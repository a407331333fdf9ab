"""Catalog of adapted drifts.

A drift assigns to a path ``w`` and a step ``k`` the value of u-dot on
``[t_k, t_{k+1})``. Catalog drifts read only ``w(t_0), ..., w(t_k)``.
Predictability is not enforced by the data layout (``rate`` receives the
whole path) so that it can be checked, see :func:`check_predictability`.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .grid import GridError, TimeGrid, geometric_breakpoints
from .paths import CameronMartinPath, SamplePath
from .tree import TreeModel, enumerate_tree


class DriftError(ValueError):
    """Invalid drift description or drift/grid incompatibility."""


def frac(x: np.ndarray) -> np.ndarray:
    """Fractional part in [0, 1)."""
    f = x - np.floor(x)
    return np.where(f >= 1.0, 0.0, f)


class DriftSpec:
    """Base class; subclasses implement :meth:`rate`."""

    variant: ClassVar[str] = ""

    def rate(self, values: np.ndarray, grid: TimeGrid, k: int) -> np.ndarray:
        """Drift at step ``k`` for a batch ``values`` of shape (N, n+1, d); returns (N, d)."""
        raise NotImplementedError

    def rates(self, values: np.ndarray, grid: TimeGrid) -> np.ndarray:
        """All steps at once, shape (N, n, d)."""
        return np.stack([self.rate(values, grid, k) for k in range(grid.n)], axis=1)

    def validate(self, grid: TimeGrid) -> None:
        pass

    def affine(self, grid: TimeGrid):
        """Coefficients (alpha, beta), each (n,), with u-dot_k = alpha_k w(t_k) + beta_k.

        ``None`` when the drift is not of this form.
        """
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError

    def describe(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass(frozen=True)
class Zero(DriftSpec):
    variant: ClassVar[str] = "zero"

    def rate(self, values, grid, k):
        return np.zeros((values.shape[0], values.shape[2]))

    def rates(self, values, grid):
        return np.zeros((values.shape[0], grid.n, values.shape[2]))

    def affine(self, grid):
        return np.zeros(grid.n), np.zeros(grid.n)

    def to_dict(self):
        return {"variant": self.variant}


@dataclass(frozen=True, eq=False)
class ConstantShift(DriftSpec):
    """Deterministic drift: a constant ``rate`` or a per-step ``schedule``."""

    rate_value: float = 1.0
    schedule: CameronMartinPath | None = None
    variant: ClassVar[str] = "constant_shift"

    def _steps(self, grid: TimeGrid) -> np.ndarray:
        if self.schedule is not None:
            return self.schedule.step_derivatives
        return np.full((grid.n, 1), float(self.rate_value))

    def validate(self, grid):
        if self.schedule is not None and self.schedule.grid != grid:
            raise DriftError("constant_shift schedule lives on a different grid")

    def rate(self, values, grid, k):
        s = self._steps(grid)[k]
        return np.broadcast_to(s, (values.shape[0], values.shape[2])).copy()

    def rates(self, values, grid):
        s = self._steps(grid)
        return np.broadcast_to(s, (values.shape[0], grid.n, values.shape[2])).copy()

    def affine(self, grid):
        s = self._steps(grid)
        if s.shape[1] != 1:
            return None
        return np.zeros(grid.n), s[:, 0].copy()

    def to_dict(self):
        if self.schedule is not None:
            return {
                "variant": self.variant,
                "schedule": {
                    "points": [float(t) for t in self.schedule.grid.points],
                    "step_derivatives": self.schedule.step_derivatives.tolist(),
                },
            }
        return {"variant": self.variant, "rate": float(self.rate_value)}


@dataclass(frozen=True)
class LinearFeedback(DriftSpec):
    """u-dot_t = a * w(t)."""

    a: float = 1.0
    variant: ClassVar[str] = "linear_feedback"

    def rate(self, values, grid, k):
        return self.a * values[:, k, :]

    def rates(self, values, grid):
        return self.a * values[:, :-1, :]

    def affine(self, grid):
        return np.full(grid.n, float(self.a)), np.zeros(grid.n)

    def to_dict(self):
        return {"variant": self.variant, "a": float(self.a)}


@dataclass(frozen=True)
class Tsirelson(DriftSpec):
    """Fractional part of the slope over the previous block of a geometric sequence.

    Breakpoints tau_j = ratio**j for j = 0..k_max (tau_0 = 1), and
    tau_{k_max+1} = 0. On the block (tau_j, tau_{j-1}] with j <= k_max the
    drift is ``sign * frac((w(tau_j) - w(tau_{j+1})) / (tau_j - tau_{j+1}))``;
    on the earliest block [0, tau_{k_max}] it is 0.
    """

    ratio: float = 0.5
    k_max: int = 3
    sign: int = -1
    variant: ClassVar[str] = "tsirelson"

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise DriftError(f"tsirelson ratio must lie in (0, 1), got {self.ratio!r}")
        if int(self.k_max) < 1:
            raise DriftError(f"tsirelson k_max must be >= 1, got {self.k_max!r}")
        if self.sign not in (1, -1):
            raise DriftError(f"tsirelson sign must be +1 or -1, got {self.sign!r}")

    def breakpoints(self) -> np.ndarray:
        """tau_0 = 1 > tau_1 > ... > tau_{k_max} > tau_{k_max+1} = 0."""
        return np.concatenate([geometric_breakpoints(self.ratio, self.k_max)[::-1], [0.0]])

    def validate(self, grid):
        for j, tau in enumerate(self.breakpoints()[1:-1], start=1):
            if not grid.contains(tau):
                raise DriftError(f"grid is missing Tsirelson breakpoint t={float(tau)!r} (ratio**{j}); "
                                 f"use a geometric grid with ratio={self.ratio}, k_max>={self.k_max}")

    def _layout(self, grid: TimeGrid):
        # per step: (index of tau_j, index of tau_{j+1}, block length), or None on the earliest block
        self.validate(grid)
        tau = self.breakpoints()
        idx = [grid.index_of(t) for t in tau]
        layout = []
        for k in range(grid.n):
            tk = grid.points[k]
            j = next(j for j in range(1, len(tau)) if tau[j] <= tk + 1e-12)
            if j == len(tau) - 1:
                layout.append(None)
            else:
                layout.append((idx[j], idx[j + 1], tau[j] - tau[j + 1]))
        return layout

    def rate(self, values, grid, k):
        lay = self._layout(grid)[k]
        if lay is None:
            return np.zeros((values.shape[0], values.shape[2]))
        hi, lo, length = lay
        return self.sign * frac((values[:, hi, :] - values[:, lo, :]) / length)

    def rates(self, values, grid):
        out = np.zeros((values.shape[0], grid.n, values.shape[2]))
        for k, lay in enumerate(self._layout(grid)):
            if lay is not None:
                hi, lo, length = lay
                out[:, k, :] = self.sign * frac((values[:, hi, :] - values[:, lo, :]) / length)
        return out

    def to_dict(self):
        return {"variant": self.variant, "ratio": float(self.ratio), "k_max": int(self.k_max), "sign": int(self.sign)}


@dataclass(frozen=True)
class Scaled(DriftSpec):
    c: float
    inner: DriftSpec
    variant: ClassVar[str] = "scaled"

    def validate(self, grid):
        self.inner.validate(grid)

    def rate(self, values, grid, k):
        return self.c * self.inner.rate(values, grid, k)

    def rates(self, values, grid):
        return self.c * self.inner.rates(values, grid)

    def affine(self, grid):
        ab = self.inner.affine(grid)
        return None if ab is None else (self.c * ab[0], self.c * ab[1])

    def to_dict(self):
        return {"variant": self.variant, "c": float(self.c), "inner": self.inner.to_dict()}


@dataclass(frozen=True)
class Stopped(DriftSpec):
    """The inner drift on [0, t_stop), zero afterwards."""

    t_stop: float
    inner: DriftSpec
    variant: ClassVar[str] = "stopped"

    def validate(self, grid):
        if not grid.contains(self.t_stop):
            raise DriftError(f"stopping time {self.t_stop!r} is not a grid point")
        self.inner.validate(grid)

    def _active(self, grid):
        return grid.points[:-1] < self.t_stop - 1e-12

    def rate(self, values, grid, k):
        if not self._active(grid)[k]:
            return np.zeros((values.shape[0], values.shape[2]))
        return self.inner.rate(values, grid, k)

    def rates(self, values, grid):
        return self.inner.rates(values, grid) * self._active(grid)[None, :, None]

    def affine(self, grid):
        ab = self.inner.affine(grid)
        if ab is None:
            return None
        m = self._active(grid).astype(float)
        return ab[0] * m, ab[1] * m

    def to_dict(self):
        return {"variant": self.variant, "t_stop": float(self.t_stop), "inner": self.inner.to_dict()}


def contains_variant(spec: DriftSpec, cls) -> DriftSpec | None:
    """First nested drift of type ``cls`` (or ``None``)."""
    if isinstance(spec, cls):
        return spec
    inner = getattr(spec, "inner", None)
    return None if inner is None else contains_variant(inner, cls)


# -- evaluation ---------------------------------------------------------------

def _batch_values(path: SamplePath) -> np.ndarray:
    return path.values if path.is_batch else path.values[None]


def eval_drift(spec: DriftSpec, path: SamplePath, k: int) -> np.ndarray:
    """u-dot at step ``k``: shape (d,) for one path, (N, d) for a batch."""
    if not 0 <= k < path.grid.n:
        raise IndexError(f"step {k} outside 0..{path.grid.n - 1}")
    spec.validate(path.grid)
    out = spec.rate(_batch_values(path), path.grid, k)
    return out if path.is_batch else out[0]


def drift_rates(spec: DriftSpec, path: SamplePath) -> np.ndarray:
    """All step values of u-dot, (n, d) or (N, n, d)."""
    spec.validate(path.grid)
    out = spec.rates(_batch_values(path), path.grid)
    if not np.all(np.isfinite(out)):
        raise DriftError("non-finite drift values")
    return out if path.is_batch else out[0]


def drift_path(spec: DriftSpec, path: SamplePath) -> CameronMartinPath:
    """The realized perturbation u(w) as a Cameron-Martin path."""
    return CameronMartinPath(path.grid, drift_rates(spec, path))


@dataclass(frozen=True)
class PredictabilityReport:
    passed: bool
    steps_checked: int
    first_violation: tuple[int, int] | None = None  # (step k, tree path index)

    def __str__(self):
        if self.passed:
            return f"predictable: {self.steps_checked} steps checked"
        k, i = self.first_violation
        return f"not predictable: step {k} changes when increments after t_{k} change (path {i})"


def check_predictability(spec: DriftSpec, model: TreeModel) -> PredictabilityReport:
    """Perturb every increment after t_k on every tree path; u-dot_k must not move."""
    paths = enumerate_tree(model)
    grid = model.grid
    spec.validate(grid)
    base_vals = paths.values
    inc = paths.increments
    for k in range(grid.n):
        base = spec.rate(base_vals, grid, k)
        for perturb in (lambda x: -x, lambda x: 3.0 * x + 1.0):
            new_inc = inc.copy()
            new_inc[:, k:] = perturb(inc[:, k:])
            vals = np.concatenate([np.zeros_like(base_vals[:, :1]), np.cumsum(new_inc, axis=1)], axis=1)
            vals[:, : k + 1] = base_vals[:, : k + 1]
            moved = np.any(spec.rate(vals, grid, k) != base, axis=-1)
            if moved.any():
                return PredictabilityReport(False, k + 1, (k, int(np.argmax(moved))))
    return PredictabilityReport(True, grid.n)


# -- serialization ------------------------------------------------------------

def drift_from_dict(data: dict) -> DriftSpec:
    try:
        v = data["variant"].replace("-", "_")
    except (KeyError, AttributeError):
        raise DriftError(f"drift description needs a 'variant' field: {data!r}") from None
    try:
        if v == "zero":
            return Zero()
        if v == "constant_shift":
            if "schedule" in data:
                sch = data["schedule"]
                grid = TimeGrid(np.asarray(sch["points"], dtype=float))
                return ConstantShift(schedule=CameronMartinPath(grid, np.asarray(sch["step_derivatives"], dtype=float)))
            return ConstantShift(float(data.get("rate", 1.0)))
        if v == "linear_feedback":
            return LinearFeedback(float(data.get("a", 1.0)))
        if v == "tsirelson":
            return Tsirelson(float(data.get("ratio", 0.5)), int(data.get("k_max", data.get("kmax", 3))),
                             int(data.get("sign", -1)))
        if v == "scaled":
            return Scaled(float(data["c"]), drift_from_dict(data["inner"]))
        if v == "stopped":
            return Stopped(float(data["t_stop"]), drift_from_dict(data["inner"]))
    except (KeyError, TypeError, GridError) as exc:
        raise DriftError(f"bad parameters for drift {v!r}: {exc}") from None
    raise DriftError(f"unknown drift variant {v!r}")


_SHORT_KEYS = {"kmax": "k_max", "t": "t_stop", "tstop": "t_stop"}


def parse_drift(text: str) -> DriftSpec:
    """Parse ``name[:key=value,...]``, inline JSON, or a path to a JSON file.

    >>> parse_drift("linear-feedback:a=2").a
    2.0
    """
    text = text.strip()
    if text.startswith("{"):
        return drift_from_dict(json.loads(text))
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            return drift_from_dict(json.load(fh))
    name, _, rest = text.partition(":")
    data: dict = {"variant": name.replace("-", "_")}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise DriftError(f"expected key=value in drift spec, got {item!r}")
        key = _SHORT_KEYS.get(key.strip(), key.strip())
        try:
            num = float(val)
        except ValueError:
            raise DriftError(f"drift parameter {key!r} is not a number: {val!r}") from None
        data[key] = int(num) if key in ("k_max", "sign") and num == math.floor(num) else num
    return drift_from_dict(data)
