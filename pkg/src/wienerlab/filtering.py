"""Filtered drift E[u-dot_k | U(t_0..t_k)], innovation process and its tests.

Two estimators of the same conditional expectation:

* ``tree_conditional_drift``: exact, by grouping the paths of an enumerated
  tree into atoms of equal transformed history;
* ``particle_filtered_drift``: k-nearest-neighbour averaging over a sampled
  ensemble (or an enumerated one, with probability weights).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .drifts import DriftSpec, drift_rates
from .grid import GridError, TimeGrid
from .paths import SamplePath
from .transform import apply_U
from .tree import TreeModel, enumerate_tree

EPS_GROUP = 1e-9
FEATURES = ("history", "index")
MIN_PARTICLES = 1000


class FilterError(ValueError):
    """Degenerate or incompatible ensemble for filtering."""


@dataclass(frozen=True, eq=False)
class FilteredDrift:
    """Per-path estimates of E[u-dot_k | U history up to t_k], shape (N, n, d)."""

    grid: TimeGrid
    values: np.ndarray
    estimator: str  # "tree-exact" | "particle"
    k_neighbors: int | None = None
    features: str | None = None

    def energy(self) -> np.ndarray:
        """1/2 sum_k |xi_k|^2 dt_k per path."""
        return 0.5 * np.einsum("nkd,k->n", self.values**2, self.grid.dt)


@dataclass(frozen=True, eq=False)
class InnovationPath:
    grid: TimeGrid
    values: np.ndarray  # (N, n+1, d), Z(0) = 0
    weights: np.ndarray | None = None

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)


@dataclass(frozen=True)
class FilterConfig:
    """k-NN settings.

    ``features="history"`` uses the raw transformed values U(t_1..t_k) as
    the neighbour metric. ``features="index"`` first regresses u-dot_k
    linearly on that history (least squares over the ensemble) and takes
    neighbours in the fitted one-dimensional index; this keeps N = 1e5 and
    n = 256 tractable. ``neighbors="radius"`` replaces the k nearest with all
    paths within ``radius`` (exact matching on tree ensembles).
    """

    k_neighbors: int | None = None
    features: str = "index"
    neighbors: str = "knn"
    radius: float = EPS_GROUP
    workers: int = 1

    def __post_init__(self):
        if self.features not in FEATURES:
            raise FilterError(f"unknown features {self.features!r}; expected one of {FEATURES}")
        if self.neighbors not in ("knn", "radius"):
            raise FilterError(f"unknown neighbour rule {self.neighbors!r}")
        if self.k_neighbors is not None and self.k_neighbors < 1:
            raise FilterError("k_neighbors must be >= 1")

    def resolved_k(self, n_paths: int) -> int:
        k = self.k_neighbors if self.k_neighbors is not None else math.ceil(math.sqrt(n_paths))
        return min(k, n_paths)


# -- exact tree oracle ----------------------------------------------------------

def atom_ids(transformed: np.ndarray, eps: float = EPS_GROUP) -> np.ndarray:
    """Atom label of every path at every step, shape (N, n).

    Column k groups paths whose transformed values agree at t_0..t_k after
    quantization at ``eps``.
    """
    N, n1, d = transformed.shape
    ids = np.zeros(N, dtype=np.int64)
    out = np.empty((N, n1 - 1), dtype=np.int64)
    q = np.rint(transformed / eps).astype(np.int64)
    for k in range(n1 - 1):
        key = np.column_stack([ids, q[:, k, :]])
        _, ids = np.unique(key, axis=0, return_inverse=True)
        ids = ids.ravel()
        out[:, k] = ids
    return out


def atom_means(ids: np.ndarray, rates: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Probability-weighted mean of ``rates[:, k]`` over each atom of ``ids[:, k]``."""
    N, n, d = rates.shape
    out = np.empty_like(rates)
    for k in range(n):
        lab = ids[:, k]
        mass = np.bincount(lab, weights=weights)
        for c in range(d):
            col = rates[:, k, c]
            if np.all(col == col[0]):
                out[:, k, c] = col
                continue
            out[:, k, c] = (np.bincount(lab, weights=weights * col) / mass)[lab]
    return out


def tree_conditional_drift(model: TreeModel, spec: DriftSpec, eps: float = EPS_GROUP) -> FilteredDrift:
    """Exact filtered drift on every path of the tree (path order of ``enumerate_tree``)."""
    paths = enumerate_tree(model)
    transformed = apply_U(spec, paths).output
    rates = drift_rates(spec, paths)
    ids = atom_ids(transformed.values, eps)
    return FilteredDrift(model.grid, atom_means(ids, rates, paths.weights), "tree-exact")


# -- particle (k-NN) estimator --------------------------------------------------

def _knn_windows_1d(x_sorted: np.ndarray, k: int) -> np.ndarray:
    """Start of the k-nearest window for every position of a sorted array."""
    N = x_sorted.size
    i = np.arange(N)
    lo = np.maximum(0, i - k + 1)
    hi = np.minimum(i, N - k)
    while True:
        active = lo < hi
        if not active.any():
            return lo
        mid = (lo + hi) // 2
        midc = np.where(active, mid, 0)
        # moving the window right pays off while the dropped point is farther
        g = (x_sorted - x_sorted[midc]) - (x_sorted[np.minimum(midc + k, N - 1)] - x_sorted)
        right = active & (g > 0)
        left = active & ~right
        lo = np.where(right, mid + 1, lo)
        hi = np.where(left, mid, hi)


def _knn_mean_1d(x: np.ndarray, y: np.ndarray, w: np.ndarray, ks) -> list[np.ndarray]:
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    mu = np.average(ys, weights=ws)
    # centring keeps the prefix-sum differences well conditioned
    P = np.concatenate([[0.0], np.cumsum(ws * (ys - mu))])
    Wc = np.concatenate([[0.0], np.cumsum(ws)])
    out = []
    for k in ks:
        s = _knn_windows_1d(xs, k)
        m = (P[s + k] - P[s]) / (Wc[s + k] - Wc[s]) + mu
        res = np.empty_like(m)
        res[order] = m
        out.append(res)
    return out


def _knn_mean_tree(X: np.ndarray, y: np.ndarray, w: np.ndarray, ks, workers: int) -> list[np.ndarray]:
    tree = cKDTree(X)
    kmax = max(ks)
    _, idx = tree.query(X, k=kmax, workers=workers)
    idx = idx.reshape(X.shape[0], kmax)
    wy, ww = (w * y)[idx], w[idx]
    return [wy[:, :k].sum(1) / ww[:, :k].sum(1) for k in ks]


def _radius_mean(X: np.ndarray, y: np.ndarray, w: np.ndarray, r: float, workers: int) -> np.ndarray:
    tree = cKDTree(X)
    nbrs = tree.query_ball_point(X, r=r, workers=workers)
    out = np.empty(X.shape[0])
    for i, nb in enumerate(nbrs):
        nb = np.asarray(nb)
        out[i] = np.dot(w[nb], y[nb]) / w[nb].sum()
    return out


class _IndexBasis:
    """Orthonormal basis of the nested histories [1, U(t_1), ..., U(t_k)]."""

    def __init__(self, transformed: np.ndarray, weights: np.ndarray):
        N, n1, d = transformed.shape
        A = np.concatenate([np.ones((N, 1)), transformed[:, 1:, :].reshape(N, -1)], axis=1)
        self.sw = np.sqrt(weights * N)
        Q, R = np.linalg.qr(A * self.sw[:, None])
        diag = np.abs(np.diag(R))
        keep = diag > 1e-10 * max(diag.max(), 1e-300)
        # dependent columns contribute nothing to the span
        self.Q = Q * keep[None, :]
        self.d = d

    def fitted(self, y: np.ndarray, k: int) -> np.ndarray:
        m = 1 + k * self.d
        Qk = self.Q[:, :m]
        return Qk @ (Qk.T @ (y * self.sw)) / self.sw


def _filter_multi(transformed: np.ndarray, rates: np.ndarray, weights: np.ndarray,
                  config: FilterConfig, ks) -> list[np.ndarray]:
    N, n, d = rates.shape
    outs = [np.empty_like(rates) for _ in ks]
    basis = _IndexBasis(transformed, weights) if config.features == "index" else None
    for k in range(n):
        for c in range(d):
            y = rates[:, k, c]
            if np.all(y == y[0]):
                for o in outs:
                    o[:, k, c] = y
                continue
            if k == 0:
                # empty history: every path is a neighbour of every other
                for o in outs:
                    o[:, k, c] = np.average(y, weights=weights)
                continue
            if config.features == "history":
                X = transformed[:, 1 : k + 1, :].reshape(N, -1)
            else:
                X = np.column_stack([basis.fitted(rates[:, k, j], k) for j in range(d)])
            if config.neighbors == "radius":
                m = _radius_mean(X, y, weights, config.radius, config.workers)
                for o in outs:
                    o[:, k, c] = m
            elif X.shape[1] == 1:
                for o, m in zip(outs, _knn_mean_1d(X[:, 0], y, weights, ks)):
                    o[:, k, c] = m
            else:
                for o, m in zip(outs, _knn_mean_tree(X, y, weights, ks, config.workers)):
                    o[:, k, c] = m
    return outs


def particle_inputs(spec: DriftSpec, paths: SamplePath):
    """Transformed values U(w) and drift rates u-dot(w) for a batch."""
    if not paths.is_batch:
        raise FilterError("particle filtering needs a batch of paths")
    transformed = apply_U(spec, paths).output.values
    return transformed, drift_rates(spec, paths)


def _check_ensemble(paths: SamplePath) -> None:
    if paths.weights is None and paths.count < MIN_PARTICLES:
        raise FilterError(f"particle filter needs N >= {MIN_PARTICLES} sampled paths, got {paths.count}")
    v = paths.values
    if np.all(v == v[:1]):
        raise FilterError("degenerate ensemble: all paths are identical")


def particle_filtered_drift_multi(spec: DriftSpec, paths: SamplePath, config: FilterConfig,
                                  ks, inputs=None) -> list[FilteredDrift]:
    """Filtered drift for several neighbour counts sharing one feature computation."""
    _check_ensemble(paths)
    transformed, rates = inputs if inputs is not None else particle_inputs(spec, paths)
    ws = paths.prob_weights()
    ks = [min(int(k), paths.count) for k in ks]
    vals = _filter_multi(transformed, rates, ws, config, ks)
    return [FilteredDrift(paths.grid, v, "particle", None if config.neighbors == "radius" else k, config.features)
            for v, k in zip(vals, ks)]


def particle_filtered_drift(spec: DriftSpec, paths: SamplePath,
                            config: FilterConfig | None = None) -> FilteredDrift:
    """k-NN estimate of E[u-dot_k | U(t_0..t_k)] for every path of the ensemble.

    The path itself is among its neighbours. Tree ensembles (with weights)
    give probability-weighted neighbour means.
    """
    config = config or FilterConfig()
    k = config.resolved_k(paths.count)
    return particle_filtered_drift_multi(spec, paths, config, [k])[0]


# -- innovation ----------------------------------------------------------------

def innovation_path(transformed: SamplePath, filtered: FilteredDrift) -> InnovationPath:
    """Z(t_k) = U(t_k) - sum_{j<k} xi_j dt_j."""
    if transformed.grid != filtered.grid:
        raise GridError("transformed paths and filtered drift live on different grids")
    u = transformed.values if transformed.is_batch else transformed.values[None]
    steps = filtered.values * filtered.grid.dt[None, :, None]
    comp = np.concatenate([np.zeros_like(steps[:, :1]), np.cumsum(steps, axis=1)], axis=1)
    return InnovationPath(filtered.grid, u - comp, transformed.weights)


def conditional_girsanov(filtered: FilteredDrift, innovation: InnovationPath, t: float = 1.0) -> np.ndarray:
    """exp(-sum_{t_j<t} xi_j . dZ_j - 1/2 sum_{t_j<t} |xi_j|^2 dt_j), one value per path."""
    if filtered.grid != innovation.grid:
        raise GridError("filtered drift and innovation live on different grids")
    m = filtered.grid.index_of(t)
    xi = filtered.values[:, :m]
    dz = innovation.increments[:, :m]
    dt = filtered.grid.dt[:m]
    log = -np.einsum("nkd,nkd->n", xi, dz) - 0.5 * np.einsum("nkd,k->n", xi * xi, dt)
    return np.exp(log)


@dataclass(frozen=True, eq=False)
class InnovationReport:
    """Per-step moment checks of innovation increments against dZ_k ~ N(0, dt_k)."""

    dt: np.ndarray
    mean: np.ndarray
    mean_se: np.ndarray
    var: np.ndarray
    var_se: np.ndarray
    corr: np.ndarray  # lag-1 correlation of dZ_k and dZ_{k+1}, length n-1
    corr_se: np.ndarray
    sigmas: float
    n_samples: int
    exact: bool = False
    atol: float = 1e-12
    flags: dict = field(default_factory=dict)

    @property
    def z_mean(self):
        return _z(self.mean, self.mean_se)

    @property
    def z_var(self):
        return _z(self.var - self.dt, self.var_se)

    @property
    def z_corr(self):
        return _z(self.corr, self.corr_se)

    def _bad(self, dev, se):
        return np.abs(dev) > self.sigmas * se + self.atol

    @property
    def mean_violations(self):
        return np.flatnonzero(self._bad(self.mean, self.mean_se))

    @property
    def var_violations(self):
        return np.flatnonzero(self._bad(self.var - self.dt, self.var_se))

    @property
    def corr_violations(self):
        return np.flatnonzero(self._bad(self.corr, self.corr_se))

    @property
    def passed(self) -> bool:
        return not (self.mean_violations.size or self.var_violations.size or self.corr_violations.size)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "sigmas": self.sigmas,
            "n_samples": self.n_samples,
            "exact": self.exact,
            "mean_violations": self.mean_violations.tolist(),
            "var_violations": self.var_violations.tolist(),
            "corr_violations": self.corr_violations.tolist(),
            "max_abs_z_mean": _maxabs(self.z_mean),
            "max_abs_z_var": _maxabs(self.z_var),
            "max_abs_z_corr": _maxabs(self.z_corr),
        }

    def rows(self):
        """Per-step rows for CSV export."""
        n = self.dt.size
        for k in range(n):
            c = self.corr[k] if k < n - 1 else float("nan")
            cs = self.corr_se[k] if k < n - 1 else float("nan")
            yield [k, self.dt[k], self.mean[k], self.mean_se[k], self.var[k], self.var_se[k], c, cs]


def _z(dev, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev == 0, 0.0, np.inf * np.sign(dev)))


def _maxabs(x):
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def innovation_bm_test(innovation: InnovationPath, sigmas: float = 4.0) -> InnovationReport:
    """Mean, variance and lag-1 correlation of innovation increments, step by step.

    Sampled ensembles need at least 1000 paths; for enumerated trees the
    moments are exact and compared with tolerance 1e-12.
    """
    dz = innovation.increments
    if dz.shape[2] != 1:
        raise FilterError("innovation test is implemented for one-dimensional paths")
    x = dz[:, :, 0]
    N, n = x.shape
    dt = innovation.grid.dt
    if innovation.weights is not None:
        w = innovation.weights / innovation.weights.sum()
        mean = w @ x
        c = x - mean
        var = w @ (c * c)
        cov = w @ (c[:, :-1] * c[:, 1:])
        sd = np.sqrt(var)
        corr = cov / np.where(sd[:-1] * sd[1:] > 0, sd[:-1] * sd[1:], 1.0)
        zeros = np.zeros(n)
        return InnovationReport(dt, mean, zeros, var, zeros, corr, zeros[:-1], sigmas, N, exact=True)
    if N < MIN_PARTICLES:
        raise FilterError(f"innovation test needs >= {MIN_PARTICLES} paths, got {N}")
    mean = x.mean(0)
    c = x - mean
    var = (c * c).sum(0) / (N - 1)
    m4 = (c**4).mean(0)
    var_se = np.sqrt(np.maximum(m4 - var**2, 0.0) / N)
    sd = np.sqrt(var)
    corr = (c[:, :-1] * c[:, 1:]).mean(0) / (sd[:-1] * sd[1:])
    corr_se = np.full(n - 1, 1.0 / math.sqrt(N))
    return InnovationReport(dt, mean, np.sqrt(var / N), var, var_se, corr, corr_se, sigmas, N)
