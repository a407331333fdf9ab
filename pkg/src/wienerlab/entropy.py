"""Kinetic energy, relative entropy and the invertibility gap.

For U = I + u with E[rho(-u)] = 1 the relative entropy of U mu is

    H(U mu | mu) = 1/2 E[ sum_k |E[u-dot_k | U-history]|^2 dt_k ],

which never exceeds the kinetic energy 1/2 E[|u|_H^2]. Equality holds
exactly when U is invertible, so the difference (the gap) is the
diagnostic. Entropy is computed from the filtered drift and, for drifts
with a closed-form inverse, from 1/2 E[|v o U|_H^2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drifts import DriftSpec, drift_rates
from .filtering import FilterConfig, atom_ids, atom_means, particle_filtered_drift_multi, particle_inputs
from .grid import TimeGrid
from .paths import SamplePath, sample_brownian
from .stats import McEstimate
from .transform import analytic_inverse, apply_U, composition_residual, solve_inverse_sde
from .tree import TreeModel, enumerate_tree

VERDICTS = ("invertible-consistent", "non-invertible", "inconclusive")
ROUNDOFF = 1e-12
MIN_N = 1000
SOLVER_SAMPLE = 4096


def _energy(rates: np.ndarray, grid: TimeGrid) -> np.ndarray:
    return 0.5 * np.einsum("nkd,k->n", rates**2, grid.dt)


def _estimate(x: np.ndarray, paths: SamplePath) -> McEstimate:
    return McEstimate.from_samples(x, paths.weights)


def _ensemble(spec: DriftSpec, grid: TimeGrid, N: int, seed: int, tree: TreeModel | None,
              threads: int = 1) -> SamplePath:
    spec.validate(grid)
    if tree is not None:
        if tree.grid != grid:
            raise ValueError("tree model lives on a different grid")
        return enumerate_tree(tree)
    if N < MIN_N:
        raise ValueError(f"Monte Carlo estimates need N >= {MIN_N}, got {N}")
    return sample_brownian(grid, seed=seed, count=N, threads=threads)


def kinetic_energy(spec: DriftSpec, grid: TimeGrid, N: int = 100_000, seed: int = 0,
                   tree: TreeModel | None = None) -> McEstimate:
    """1/2 E[sum_k |u-dot_k|^2 dt_k] (exact when a tree is given)."""
    paths = _ensemble(spec, grid, N, seed, tree)
    return _estimate(_energy(drift_rates(spec, paths), grid), paths)


def _filtered(spec, paths, config, tree):
    """Drift rates and filtered drifts for k and 2k neighbours (one array when exact)."""
    transformed, rates = particle_inputs(spec, paths)
    if tree is not None:
        xi = atom_means(atom_ids(transformed), rates, paths.weights)
        return transformed, rates, [xi], None
    k = config.resolved_k(paths.count)
    fds = particle_filtered_drift_multi(spec, paths, config, [k, 2 * k], inputs=(transformed, rates))
    return transformed, rates, [f.values for f in fds], k


def entropy_via_filter(spec: DriftSpec, grid: TimeGrid, N: int = 100_000, seed: int = 0,
                       config: FilterConfig | None = None, tree: TreeModel | None = None) -> McEstimate:
    """1/2 E[sum_k |xi_k|^2 dt_k] with xi the filtered drift."""
    config = config or FilterConfig()
    paths = _ensemble(spec, grid, N, seed, tree)
    _, _, xis, _ = _filtered(spec, paths, config, tree)
    return _estimate(_energy(xis[0], grid), paths)


def _inverse_energy(spec, paths, transformed_vals):
    grid = paths.grid
    U = SamplePath(grid, transformed_vals, weights=paths.weights)
    V = analytic_inverse(spec, U)
    vdot = (np.diff(V.values, axis=1) - np.diff(transformed_vals, axis=1)) / grid.dt[None, :, None]
    return _energy(vdot, grid)


def entropy_via_inverse(spec: DriftSpec, grid: TimeGrid, N: int = 100_000, seed: int = 0,
                        tree: TreeModel | None = None) -> McEstimate:
    """1/2 E[|v o U|_H^2] with V = I + v the closed-form inverse of U."""
    paths = _ensemble(spec, grid, N, seed, tree)
    transformed = apply_U(spec, paths).output.values
    return _estimate(_inverse_energy(spec, paths, transformed), paths)


def decide(gap: McEstimate, bias_margin: float) -> str:
    """Verdict from a paired gap estimate.

    non-invertible: gap > 5 se + margin; invertible-consistent:
    |gap| <= 3 se + margin; otherwise inconclusive. A round-off floor of
    1e-12 applies to both thresholds.
    """
    if gap.mean > 5.0 * gap.stderr + bias_margin + ROUNDOFF:
        return "non-invertible"
    if abs(gap.mean) <= 3.0 * gap.stderr + bias_margin + ROUNDOFF:
        return "invertible-consistent"
    return "inconclusive"


@dataclass
class DiagnosticReport:
    drift: dict
    grid: dict
    N: int
    seed: int
    oracle: str
    energy: McEstimate
    entropy_filter: McEstimate
    gap: McEstimate
    bias_margin: float
    verdict: str
    entropy_filter_2k: McEstimate | None = None
    gap_2k: McEstimate | None = None
    entropy_inverse: McEstimate | None = None
    k_neighbors: int | None = None
    features: str | None = None
    tree: str | None = None
    solver: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def est(e):
            return None if e is None else e.to_dict()

        return {
            "drift": self.drift,
            "grid": self.grid,
            "N": self.N,
            "seed": self.seed,
            "oracle": self.oracle,
            "tree": self.tree,
            "k_neighbors": self.k_neighbors,
            "features": self.features,
            "energy": est(self.energy),
            "entropy_filter": est(self.entropy_filter),
            "entropy_filter_2k": est(self.entropy_filter_2k),
            "entropy_inverse": est(self.entropy_inverse),
            "gap": est(self.gap),
            "gap_2k": est(self.gap_2k),
            "bias_margin": self.bias_margin,
            "verdict": self.verdict,
            "solver": self.solver,
        }

    CSV_FIELDS = ("n", "N", "oracle", "energy", "energy_se", "entropy_filter", "entropy_filter_se",
                  "entropy_inverse", "entropy_inverse_se", "gap", "gap_se", "bias_margin", "verdict")

    def csv_row(self) -> list:
        inv = self.entropy_inverse
        return [self.grid["n"], self.N, self.oracle,
                self.energy.mean, self.energy.stderr,
                self.entropy_filter.mean, self.entropy_filter.stderr,
                "" if inv is None else inv.mean, "" if inv is None else inv.stderr,
                self.gap.mean, self.gap.stderr, self.bias_margin, self.verdict]


def _solver_summary(spec: DriftSpec, paths: SamplePath) -> dict:
    sub = paths[: min(paths.count, SOLVER_SAMPLE)]
    sub = SamplePath(sub.grid, sub.values)
    res = solve_inverse_sde(spec, sub)
    left, right = composition_residual(spec, sub, res.candidate)
    return {"paths": sub.count, "method": "sequential-euler", "max_fixed_point_residual": res.residual,
            "composition_left": left, "composition_right": right}


def invertibility_gap(spec: DriftSpec, grid: TimeGrid, N: int = 100_000, seed: int = 0,
                      config: FilterConfig | None = None, tree: TreeModel | None = None,
                      threads: int = 1) -> DiagnosticReport:
    """Paired estimate of 1/2 E[sum_k (|u-dot_k|^2 - |xi_k|^2) dt_k] and a verdict.

    Without ``tree`` the filtered drift is the k-NN estimate with k and 2k
    neighbours; ``bias_margin`` is the difference of the two gaps. With a
    tree every quantity is an exact expectation and the margin is 0.
    """
    config = config or FilterConfig()
    paths = _ensemble(spec, grid, N, seed, tree, threads)
    transformed, rates, xis, k = _filtered(spec, paths, config, tree)
    e = _energy(rates, grid)
    energy = _estimate(e, paths)
    f1 = _energy(xis[0], grid)
    ent, gap = _estimate(f1, paths), _estimate(e - f1, paths)
    ent2 = gap2 = None
    margin = 0.0
    if len(xis) > 1:
        f2 = _energy(xis[1], grid)
        ent2, gap2 = _estimate(f2, paths), _estimate(e - f2, paths)
        margin = abs(gap2.mean - gap.mean)
    inv = None
    if spec.affine(grid) is not None:
        inv = _estimate(_inverse_energy(spec, paths, transformed), paths)
    return DiagnosticReport(
        drift=spec.to_dict(), grid=grid.summary(), N=paths.count, seed=seed,
        oracle="tree" if tree is not None else "mc",
        energy=energy, entropy_filter=ent, gap=gap, bias_margin=margin, verdict=decide(gap, margin),
        entropy_filter_2k=ent2, gap_2k=gap2, entropy_inverse=inv,
        k_neighbors=k, features=None if tree is not None else config.features,
        tree=None if tree is None else tree.label(),
        solver=_solver_summary(spec, paths),
    )


def refinement_study(spec: DriftSpec, grids, N: int = 10_000, seed: int = 0,
                     config: FilterConfig | None = None, threads: int = 1) -> list[DiagnosticReport]:
    """One report per grid, grids ordered from coarse to fine."""
    grids = list(grids)
    for a, b in zip(grids, grids[1:]):
        if b.n < a.n:
            raise ValueError("grids must be ordered by refinement")
    return [invertibility_gap(spec, g, N, seed, config, threads=threads) for g in grids]


def gap_non_increasing(reports, sigmas: float = 3.0) -> bool:
    """Each gap is at most the previous one plus combined noise and bias margin."""
    for a, b in zip(reports, reports[1:]):
        noise = sigmas * math.hypot(a.gap.stderr, b.gap.stderr)
        if b.gap.mean > a.gap.mean + noise + max(a.bias_margin, b.bias_margin) + ROUNDOFF:
            return False
    return True
