"""The forward map U = I + u and numerical inversion of it.

Inverting U at ``w`` means solving the discrete Volterra equation

    V(t_k) = w(t_k) - sum_{j<k} u-dot_j(V) dt_j,

the grid version of dV = -u-dot(V) dt + dW.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .drifts import DriftError, DriftSpec, drift_path
from .grid import GridError
from .paths import CameronMartinPath, SamplePath

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


class InverseSolveError(ArithmeticError):
    """Non-finite iterates in the inverse solver."""


@dataclass(frozen=True, eq=False)
class TransformResult:
    input: SamplePath
    output: SamplePath
    drift_realized: CameronMartinPath


@dataclass(frozen=True, eq=False)
class InverseSolveResult:
    candidate: SamplePath
    iterations: int
    residual: float  # sup-norm fixed-point defect over all paths
    converged: bool
    path_residuals: np.ndarray = field(repr=False, default=None)
    trace: list = field(repr=False, default_factory=list)  # (iteration, residual)


def _vals(path: SamplePath) -> np.ndarray:
    return path.values if path.is_batch else path.values[None]


def _like(template: SamplePath, vals: np.ndarray) -> SamplePath:
    v = vals if template.is_batch else vals[0]
    return SamplePath(template.grid, v, weights=template.weights, seed=template.seed)


def _integrated(rates: np.ndarray, dt: np.ndarray) -> np.ndarray:
    steps = rates * dt[None, :, None]
    return np.concatenate([np.zeros_like(steps[:, :1]), np.cumsum(steps, axis=1)], axis=1)


def apply_U(spec: DriftSpec, path: SamplePath) -> TransformResult:
    """U(w)(t_k) = w(t_k) + sum_{j<k} u-dot_j(w) dt_j."""
    u = drift_path(spec, path)
    out = path.values + u.values
    return TransformResult(path, SamplePath(path.grid, out, weights=path.weights, seed=path.seed), u)


def _defect(spec: DriftSpec, w: np.ndarray, v: np.ndarray, grid) -> np.ndarray:
    target = w - _integrated(spec.rates(v, grid), grid.dt)
    return np.max(np.abs(v - target), axis=(1, 2))


def solve_inverse_sde(spec: DriftSpec, path: SamplePath, method: str = "sequential-euler",
                      tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> InverseSolveResult:
    """Find V with V = w - int u-dot(V) dt on the grid.

    ``sequential-euler`` fills V step by step; the future of V is NaN while
    step k is evaluated, so a drift that is not predictable surfaces as an
    InverseSolveError. ``picard`` iterates V <- w - int u-dot(V) dt from V = w.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be > 0 and max_iter >= 1")
    grid = path.grid
    spec.validate(grid)
    w = _vals(path)
    trace = []
    if method == "sequential-euler":
        v = np.full_like(w, np.nan)
        v[:, 0] = 0.0
        acc = np.zeros_like(w[:, 0])
        for k in range(grid.n):
            r = spec.rate(v, grid, k)
            if not np.all(np.isfinite(r)):
                raise InverseSolveError(f"non-finite drift at step {k} (overflow, or a drift that reads the future)")
            acc = acc + r * grid.dt[k]
            v[:, k + 1] = w[:, k + 1] - acc
        iterations = 1
        res = _defect(spec, w, v, grid)
        trace.append((1, float(res.max())))
    elif method == "picard":
        v = w.copy()
        iterations = 0
        history = []
        while True:
            iterations += 1
            v = w - _integrated(spec.rates(v, grid), grid.dt)
            if not np.all(np.isfinite(v)):
                raise InverseSolveError(f"non-finite Picard iterate at iteration {iterations}")
            res = _defect(spec, w, v, grid)
            history.append(float(res.max()))
            trace.append((iterations, history[-1]))
            if history[-1] <= tol or iterations >= max_iter:
                break
            # divergence guard
            if len(history) > 5 and history[-1] > 10.0 * history[-6]:
                break
    else:
        raise ValueError(f"unknown method {method!r}; use 'picard' or 'sequential-euler'")
    worst = float(res.max())
    return InverseSolveResult(_like(path, v), iterations, worst, worst <= tol,
                              res if path.is_batch else res[:1], trace)


def composition_residual(spec: DriftSpec, path: SamplePath, inverse_candidate: SamplePath,
                         method: str = "sequential-euler") -> tuple[float, float]:
    """(sup |U(V(w)) - w|, sup |V(U(w)) - w|); the second re-solves on U(w)."""
    if inverse_candidate.grid != path.grid:
        raise GridError("inverse candidate lives on a different grid")
    left = np.max(np.abs(apply_U(spec, inverse_candidate).output.values - path.values))
    forward = apply_U(spec, path).output
    back = solve_inverse_sde(spec, forward, method=method).candidate
    right = np.max(np.abs(back.values - path.values))
    return float(left), float(right)


def discrete_resolvent(alpha: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """R with (I + K)^{-1} = I - R for K_kj = alpha_j dt_j (j < k).

    R_kj = alpha_j dt_j prod_{j<i<k} (1 - alpha_i dt_i).
    """
    n = dt.size
    damp = 1.0 - alpha * dt
    R = np.zeros((n + 1, n + 1))
    for j in range(n):
        R[j + 1:, j] = alpha[j] * dt[j] * np.concatenate([[1.0], np.cumprod(damp[j + 1:])])
    return R


def continuous_resolvent(a: float, points: np.ndarray) -> np.ndarray:
    """Trapezoid weights for y -> a int_0^t e^{-a(t-s)} y(s) ds on the grid."""
    n = points.size - 1
    dt = np.diff(points)
    Q = np.zeros((n + 1, n + 1))
    for k in range(1, n + 1):
        wts = np.zeros(k + 1)
        wts[:-1] += 0.5 * dt[:k]
        wts[1:] += 0.5 * dt[:k]
        Q[k, : k + 1] = a * np.exp(-a * (points[k] - points[: k + 1])) * wts
    return Q


def analytic_inverse(spec: DriftSpec, path: SamplePath, kernel: str = "discrete") -> SamplePath:
    """Closed-form inverse for affine drifts u-dot_k = alpha_k w(t_k) + beta_k.

    Covers Zero, ConstantShift, LinearFeedback and their Scaled/Stopped
    versions. ``kernel="continuous"`` uses the exponential resolvent
    e^{-a(t-s)} by trapezoid quadrature (constant alpha only); it converges
    to the discrete inverse as the grid is refined.
    """
    grid = path.grid
    spec.validate(grid)
    ab = spec.affine(grid)
    if ab is None:
        raise DriftError(f"no closed-form inverse for drift {spec.describe()}")
    alpha, beta = ab
    w = _vals(path)
    h = np.concatenate([[0.0], np.cumsum(beta * grid.dt)])
    y = w - h[None, :, None]
    if kernel == "discrete":
        R = discrete_resolvent(alpha, grid.dt)
    elif kernel == "continuous":
        if not np.allclose(alpha, alpha[0], rtol=0, atol=0):
            raise DriftError("continuous resolvent needs a constant feedback coefficient")
        R = continuous_resolvent(float(alpha[0]), grid.points)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    v = y - np.einsum("kj,njd->nkd", R, y)
    v[:, 0] = 0.0
    return _like(path, v)


def write_trace_csv(fh, trace) -> None:
    writer = csv.writer(fh, lineterminator="\r\n")
    writer.writerow(["iteration", "residual"])
    for it, r in trace:
        writer.writerow([it, repr(float(r))])
