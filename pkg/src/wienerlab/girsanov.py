"""Ito sums and Girsanov exponentials, computed in log space."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .drifts import DriftSpec, drift_path
from .grid import GridError, TimeGrid
from .paths import CameronMartinPath, SamplePath, cm_norm_sq, sample_brownian
from .stats import McEstimate


@dataclass(frozen=True, eq=False)
class GirsanovWeight:
    """log rho = sign * ito - 1/2 * energy (scalar or per path).

    ``ito`` is sum u-dot_k . dW_k and ``energy`` is |u|_H^2 = sum |u-dot_k|^2 dt_k.
    """

    log_weight: np.ndarray | float
    ito: np.ndarray | float
    energy: np.ndarray | float

    @property
    def weight(self):
        return np.exp(self.log_weight)


def ito_sum(integrand: CameronMartinPath, path: SamplePath):
    """Left-point stochastic sum sum_k hdot_k . dW_k."""
    if integrand.grid != path.grid:
        raise GridError("integrand and path live on different grids")
    out = np.einsum("...kd,...kd->...", integrand.step_derivatives, path.increments)
    return float(out) if np.ndim(out) == 0 else out


def girsanov_weight(spec: DriftSpec, path: SamplePath, sign: int = 1) -> GirsanovWeight:
    """Girsanov exponential of ``sign * u`` along ``path``."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    u = drift_path(spec, path)
    ito = ito_sum(u, path)
    energy = cm_norm_sq(u)
    return GirsanovWeight(sign * np.asarray(ito) - 0.5 * np.asarray(energy), ito, energy)


def check_normalization(spec: DriftSpec, grid: TimeGrid, N: int, seed: int = 0,
                        threads: int = 1, chunk: int = 20_000) -> McEstimate:
    """Monte Carlo estimate of E[rho(-u)] under Wiener measure."""
    if N < 1000:
        raise ValueError(f"normalization check needs N >= 1000, got {N}")
    spec.validate(grid)
    w = np.empty(N)
    for start in range(0, N, chunk):
        stop = min(N, start + chunk)
        paths = sample_brownian(grid, seed=seed, count=stop - start, start=start, threads=threads)
        w[start:stop] = girsanov_weight(spec, paths, sign=-1).weight
    return McEstimate.from_samples(w)


def write_weights_csv(fh, weights: GirsanovWeight, first_id: int = 0) -> None:
    writer = csv.writer(fh, lineterminator="\r\n")
    writer.writerow(["path_id", "log_weight", "weight"])
    lw = np.atleast_1d(weights.log_weight)
    for i, x in enumerate(lw):
        writer.writerow([first_id + i, repr(float(x)), repr(float(np.exp(x)))])
