"""Command-line entry point: ``wienerlab {diagnose,invert,oracle,innovation,refine}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags (flags win). Every report embeds the
resolved configuration except for ``out`` and ``threads``, which do not
affect results.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .drifts import DriftError, DriftSpec, Tsirelson, contains_variant, drift_from_dict, parse_drift
from .entropy import invertibility_gap, refinement_study
from .filtering import (FilterConfig, FilterError, atom_ids, atom_means, innovation_bm_test, innovation_path,
                        particle_filtered_drift_multi, particle_inputs, FilteredDrift)
from .grid import GridError, TimeGrid, make_grid
from .io import dump_json, write_filtered_batch, write_rows
from .paths import SamplePath, sample_brownian
from .transform import (InverseSolveError, analytic_inverse, apply_U, solve_inverse_sde, write_trace_csv)
from .tree import TreeCapError, TreeModel, enumerate_tree

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("wienerlab")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    drift: object = "zero"
    n: int = 64
    N: int = 10_000
    seed: int = 0
    out: str = "out"
    threads: int = 0
    oracle: str = "mc"
    depth: int = 10
    grid: str = "auto"
    branching: str = "rademacher"
    nodes: int = 3
    k_neighbors: int | None = None
    features: str = "index"
    method: str = "sequential-euler"
    tol: float = 1e-10
    max_iter: int = 200
    ns: str = "16,64,256"
    sigmas: float = 4.0

    RUNTIME_ONLY = ("out", "threads")

    def resolved(self) -> dict:
        d = asdict(self)
        for key in self.RUNTIME_ONLY:
            d.pop(key)
        d["drift"] = self.spec().to_dict()
        return d

    def spec(self) -> DriftSpec:
        if isinstance(self.drift, dict):
            return drift_from_dict(self.drift)
        return parse_drift(str(self.drift))

    def worker_count(self) -> int:
        return self.threads if self.threads and self.threads > 0 else (os.cpu_count() or 1)

    def make_grid(self, n: int | None = None) -> TimeGrid:
        if n is None:
            n = self.depth if self.oracle == "tree" else self.n
        kind = self.grid
        tsi = contains_variant(self.spec(), Tsirelson)
        if kind == "auto":
            kind = "geometric" if tsi is not None else "uniform"
        if kind == "geometric":
            if tsi is None:
                raise ConfigError("a geometric grid needs a Tsirelson drift to take ratio and k_max from")
            return make_grid(n, "geometric", ratio=tsi.ratio, k_max=tsi.k_max)
        return make_grid(n, kind)

    def tree_model(self, grid: TimeGrid) -> TreeModel:
        if self.branching == "rademacher":
            return TreeModel(grid)
        return TreeModel(grid, "gauss_hermite", self.nodes)

    def filter_config(self) -> FilterConfig:
        return FilterConfig(k_neighbors=self.k_neighbors, features=self.features, workers=self.worker_count())

    def validate(self) -> None:
        spec = self.spec()
        if self.oracle not in ("mc", "tree"):
            raise ConfigError(f"oracle must be 'mc' or 'tree', got {self.oracle!r}")
        if self.N < 1 or self.n < 1 or self.depth < 1:
            raise ConfigError("n, N and depth must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        grids = [self.make_grid()]
        if self.ns:
            grids += [self.make_grid(int(x)) for x in str(self.ns).split(",") if x.strip()]
        for g in grids:
            spec.validate(g)
        if self.oracle == "tree":
            self.tree_model(grids[0])
        self.filter_config()


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with experiment settings")
    common.add_argument("--drift", help="drift spec: name[:k=v,...], inline JSON or a JSON file")
    common.add_argument("--n", type=int, help="number of grid steps")
    common.add_argument("--N", type=int, help="number of Monte Carlo paths")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker cap (results do not depend on it)")
    common.add_argument("--oracle", choices=["mc", "tree"])
    common.add_argument("--depth", type=int, help="tree depth (grid steps) for --oracle tree")
    common.add_argument("--grid", choices=["auto", "uniform", "geometric"])
    common.add_argument("--branching", choices=["rademacher", "gauss_hermite"])
    common.add_argument("--nodes", type=int, help="Gauss-Hermite nodes per step")
    common.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    common.add_argument("--features", choices=["index", "history"])

    p = argparse.ArgumentParser(prog="wienerlab", description="Invertibility diagnostics for adapted "
                                "perturbations of identity on discretized Wiener space.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("diagnose", parents=[common], help="energy, entropy and gap verdict")
    inv = sub.add_parser("invert", parents=[common], help="solve the inverse SDE path by path")
    inv.add_argument("--method", choices=["sequential-euler", "picard"])
    inv.add_argument("--tol", type=float)
    inv.add_argument("--max-iter", dest="max_iter", type=int)
    sub.add_parser("oracle", parents=[common], help="exact tree filtered drift and gap")
    innov = sub.add_parser("innovation", parents=[common], help="Brownian-motion tests of the innovation")
    innov.add_argument("--sigmas", type=float)
    ref = sub.add_parser("refine", parents=[common], help="gap over a family of grids")
    ref.add_argument("--ns", help="comma-separated grid sizes, coarse to fine")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    names = {f.name for f in fields(cfg)}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for k, v in data.items():
            setattr(cfg, k, v)
    for k, v in vars(args).items():
        if k in names and v is not None:
            setattr(cfg, k, v)
    if args.command != "refine":
        cfg.ns = ""
    if args.command == "oracle":
        cfg.oracle = "tree"
    return cfg


def _write(out: str, name: str, text: str) -> str:
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _open_csv(out: str, name: str):
    return open(os.path.join(out, name), "w", encoding="utf-8", newline="")


def _envelope(cfg: ExperimentConfig, command: str, body: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg.resolved(), **body}


def cmd_diagnose(cfg: ExperimentConfig) -> int:
    spec, grid = cfg.spec(), cfg.make_grid()
    tree = cfg.tree_model(grid) if cfg.oracle == "tree" else None
    rep = invertibility_gap(spec, grid, cfg.N, cfg.seed, cfg.filter_config(), tree=tree, threads=cfg.worker_count())
    _write(cfg.out, "report.json", dump_json(_envelope(cfg, "diagnose", {"report": rep.to_dict()})))
    with _open_csv(cfg.out, "summary.csv") as fh:
        write_rows(fh, rep.CSV_FIELDS, [rep.csv_row()])
    log.info("gap %s, bias margin %s, verdict %s", rep.gap, rep.bias_margin, rep.verdict)
    print(f"verdict: {rep.verdict}  gap={rep.gap}  energy={rep.energy}  entropy={rep.entropy_filter}")
    return EXIT_OK


def cmd_invert(cfg: ExperimentConfig) -> int:
    spec, grid = cfg.spec(), cfg.make_grid()
    if cfg.oracle == "tree":
        w = enumerate_tree(cfg.tree_model(grid))
        w = SamplePath(grid, w.values)
    else:
        w = sample_brownian(grid, seed=cfg.seed, count=cfg.N, threads=cfg.worker_count())
    res = solve_inverse_sde(spec, w, method=cfg.method, tol=cfg.tol, max_iter=cfg.max_iter)
    V = res.candidate.values
    left = np.max(np.abs(apply_U(spec, res.candidate).output.values - w.values), axis=(1, 2))
    back = solve_inverse_sde(spec, apply_U(spec, w).output, method=cfg.method, tol=cfg.tol, max_iter=cfg.max_iter)
    right = np.max(np.abs(back.candidate.values - w.values), axis=(1, 2))
    header = ["path_id", "fixed_point_residual", "composition_left", "composition_right"]
    cols = [res.path_residuals, left, right]
    analytic = None
    if spec.affine(grid) is not None:
        analytic = np.max(np.abs(analytic_inverse(spec, w).values - V), axis=(1, 2))
        header.append("analytic_sup_diff")
        cols.append(analytic)
    with _open_csv(cfg.out, "residuals.csv") as fh:
        write_rows(fh, header, ([i, *(c[i] for c in cols)] for i in range(w.count)))
    with _open_csv(cfg.out, "trace.csv") as fh:
        write_trace_csv(fh, res.trace)
    summary = {
        "method": cfg.method, "paths": w.count, "iterations": res.iterations, "converged": res.converged,
        "max_fixed_point_residual": res.residual, "max_composition_left": float(left.max()),
        "max_composition_right": float(right.max()),
        "max_analytic_sup_diff": None if analytic is None else float(analytic.max()),
    }
    _write(cfg.out, "summary.json", dump_json(_envelope(cfg, "invert", {"summary": summary})))
    print(f"max residual {res.residual!r}; composition ({float(left.max())!r}, {float(right.max())!r})")
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig) -> int:
    spec = cfg.spec()
    grid = cfg.make_grid()
    model = cfg.tree_model(grid)
    rep = invertibility_gap(spec, grid, seed=cfg.seed, tree=model)
    paths = enumerate_tree(model)
    transformed, rates = particle_inputs(spec, paths)
    xi = atom_means(atom_ids(transformed), rates, paths.weights)
    with open(os.path.join(cfg.out, "filtered_drift.bin"), "wb") as fh:
        write_filtered_batch(fh, FilteredDrift(grid, xi, "tree-exact"), cfg.seed)
    with _open_csv(cfg.out, "filtered_drift.csv") as fh:
        rows = ([i, k, grid.points[k], paths.weights[i], rates[i, k, 0], xi[i, k, 0]]
                for i in range(paths.count) for k in range(grid.n))
        write_rows(fh, ["path_id", "k", "t_k", "weight", "drift", "filtered_drift"], rows)
    body = {"tree": model.label(), "paths": paths.count, "energy": rep.energy.mean,
            "entropy_filter": rep.entropy_filter.mean,
            "entropy_inverse": None if rep.entropy_inverse is None else rep.entropy_inverse.mean,
            "gap": rep.gap.mean, "verdict": rep.verdict}
    _write(cfg.out, "oracle.json", dump_json(_envelope(cfg, "oracle", body)))
    print(f"exact gap {rep.gap.mean!r} (energy {rep.energy.mean!r}, entropy {rep.entropy_filter.mean!r})")
    return EXIT_OK


def cmd_innovation(cfg: ExperimentConfig) -> int:
    spec, grid = cfg.spec(), cfg.make_grid()
    if cfg.oracle == "tree":
        paths = enumerate_tree(cfg.tree_model(grid))
        transformed, rates = particle_inputs(spec, paths)
        fd = FilteredDrift(grid, atom_means(atom_ids(transformed), rates, paths.weights), "tree-exact")
    else:
        paths = sample_brownian(grid, seed=cfg.seed, count=cfg.N, threads=cfg.worker_count())
        config = cfg.filter_config()
        inputs = particle_inputs(spec, paths)
        transformed = inputs[0]
        fd = particle_filtered_drift_multi(spec, paths, config, [config.resolved_k(paths.count)], inputs=inputs)[0]
    Z = innovation_path(SamplePath(grid, transformed, weights=paths.weights), fd)
    rep = innovation_bm_test(Z, sigmas=cfg.sigmas)
    with _open_csv(cfg.out, "innovation_moments.csv") as fh:
        write_rows(fh, ["k", "dt", "mean", "mean_se", "var", "var_se", "lag1_corr", "lag1_corr_se"], rep.rows())
    _write(cfg.out, "innovation.json", dump_json(_envelope(cfg, "innovation", {"report": rep.to_dict()})))
    print(f"innovation tests {'pass' if rep.passed else 'FAIL'} at {cfg.sigmas} sigma")
    return EXIT_OK


def cmd_refine(cfg: ExperimentConfig) -> int:
    spec = cfg.spec()
    grids = [cfg.make_grid(int(x)) for x in cfg.ns.split(",") if x.strip()]
    reps = refinement_study(spec, grids, cfg.N, cfg.seed, cfg.filter_config(), threads=cfg.worker_count())
    with _open_csv(cfg.out, "refine.csv") as fh:
        write_rows(fh, reps[0].CSV_FIELDS, [r.csv_row() for r in reps])
    _write(cfg.out, "refine.json", dump_json(_envelope(cfg, "refine", {"reports": [r.to_dict() for r in reps]})))
    for r in reps:
        print(f"n={r.grid['n']}: gap={r.gap} verdict={r.verdict}")
    return EXIT_OK


COMMANDS = {"diagnose": cmd_diagnose, "invert": cmd_invert, "oracle": cmd_oracle,
            "innovation": cmd_innovation, "refine": cmd_refine}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        cfg.validate()
        os.makedirs(cfg.out, exist_ok=True)
    except (ConfigError, DriftError, GridError, TreeCapError, FilterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        # non-finite values are detected explicitly and reported as exit 3
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return COMMANDS[args.command](cfg)
    except (TreeCapError, DriftError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InverseSolveError, FilterError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
