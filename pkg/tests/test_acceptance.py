"""Acceptance criteria, one test each, at the stated sample sizes and tolerances.

Each test prints a PASS/FAIL line with the measured numbers before asserting.
"""

import filecmp

import numpy as np
import pytest

from wienerlab.cli import main
from wienerlab.drifts import ConstantShift, LinearFeedback, Scaled, Stopped, Tsirelson, Zero, contains_variant
from wienerlab.entropy import ROUNDOFF, invertibility_gap
from wienerlab.filtering import (FilterConfig, innovation_bm_test, innovation_path, particle_filtered_drift,
                                 particle_filtered_drift_multi, particle_inputs, tree_conditional_drift)
from wienerlab.girsanov import check_normalization
from wienerlab.grid import make_grid
from wienerlab.paths import SamplePath, sample_brownian
from wienerlab.transform import analytic_inverse, composition_residual, solve_inverse_sde
from wienerlab.tree import TreeModel, enumerate_tree

N_MC = 100_000


@pytest.fixture
def verdict(capsys):
    def record(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return record


def geometric(n, ratio=0.5, k_max=3):
    return make_grid(n, "geometric", ratio=ratio, k_max=k_max)


def test_criterion_1_girsanov_normalization(verdict):
    cases = [("constant_shift(1)", ConstantShift(1.0), make_grid(128)),
             ("linear_feedback(1)", LinearFeedback(1.0), make_grid(128)),
             ("tsirelson(0.5,3)", Tsirelson(0.5, 3), geometric(128))]
    details, ok = [], True
    for name, spec, grid in cases:
        est = check_normalization(spec, grid, N_MC, seed=101)
        good = est.covers(1.0, sigmas=3)
        ok &= good
        details.append(f"{name} {est.mean:.5f}+/-{est.stderr:.5f}")
    verdict("1 E[rho(-u)] = 1 within 3 se", ok, "; ".join(details))
    assert ok


def test_criterion_2_constant_shift_equality(verdict):
    rep = invertibility_gap(ConstantShift(1.0), make_grid(64), N_MC, seed=2)
    ok = (abs(rep.energy.mean - 0.5) <= 1e-12
          and rep.entropy_filter.covers(0.5, 3) and rep.entropy_inverse.covers(0.5, 3)
          and rep.verdict == "invertible-consistent")
    verdict("2 constant shift energy = entropy = 1/2", ok,
            f"energy {rep.energy.mean!r}, filter {rep.entropy_filter}, inverse {rep.entropy_inverse}, {rep.verdict}")
    assert ok


def test_criterion_3_linear_feedback_equality(verdict):
    rep = invertibility_gap(LinearFeedback(1.0), make_grid(256), N_MC, seed=3)
    e, fi, inv = rep.energy, rep.entropy_filter, rep.entropy_inverse
    band = 3 * fi.stderr + rep.bias_margin
    checks = {
        "energy": e.covers(0.25, 3),
        "inverse": inv.covers(0.25, 3),
        "filter": abs(fi.mean - 0.25) <= band,
        "verdict": rep.verdict == "invertible-consistent",
    }
    ok = all(checks.values())
    verdict("3 linear feedback energy = entropy = 1/4", ok,
            f"energy {e}, inverse {inv}, filter {fi} (band {band:.2g}), gap {rep.gap} "
            f"margin {rep.bias_margin:.2g}, {rep.verdict}; {checks}")
    assert ok


def test_criterion_4_inverse_sde(verdict):
    grid = make_grid(256)
    w = sample_brownian(grid, seed=4, count=1000)
    worst = {}
    for name, spec in (("zero", Zero()), ("shift", ConstantShift(1.0))):
        res = solve_inverse_sde(spec, w)
        worst[name] = max(composition_residual(spec, w, res.candidate))
    lf = LinearFeedback(1.0)
    exact = analytic_inverse(lf, w).values
    for method in ("sequential-euler", "picard"):
        res = solve_inverse_sde(lf, w, method=method, tol=1e-12)
        worst[f"lf-{method}-vs-resolvent"] = float(np.max(np.abs(res.candidate.values - exact)))
        worst[f"lf-{method}-composition"] = max(composition_residual(lf, w, res.candidate, method=method))
    ok = (worst["zero"] <= 1e-12 and worst["shift"] <= 1e-12
          and all(v <= 1e-8 for k, v in worst.items() if k.startswith("lf")))
    verdict("4 inverse SDE residuals", ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))
    assert ok


def test_criterion_5_tsirelson_strict_gap(verdict):
    spec = Tsirelson(0.5, 3)
    exact = {}
    for depth in (12, 14):
        grid = geometric(depth)
        exact[depth] = invertibility_gap(spec, grid, tree=TreeModel(grid)).gap.mean
    strict = all(g > ROUNDOFF for g in exact.values())
    grid = geometric(12)
    mc = invertibility_gap(spec, grid, N_MC, seed=5)
    reproduce = abs(mc.gap.mean - exact[12]) <= 3 * mc.gap.stderr + mc.bias_margin
    ok = strict and reproduce
    verdict("5 Tsirelson gap > 0 (tree exact) and MC reproduces it", ok,
            f"tree-exact gap depth12 {exact[12]!r}, depth14 {exact[14]!r} (strict: {strict}); "
            f"MC gap {mc.gap} margin {mc.bias_margin:.2g} vs exact (reproduces: {reproduce})")
    assert ok


CATALOG = [("zero", Zero()), ("constant_shift", ConstantShift(1.0)), ("linear_feedback", LinearFeedback(1.0)),
           ("stopped_lf", Stopped(0.5, LinearFeedback(1.0))), ("tsirelson", Tsirelson(0.5, 3)),
           ("scaled_tsirelson", Scaled(2.0, Tsirelson(0.5, 3)))]


def test_criterion_6_jensen(verdict):
    lines, ok = [], True
    for name, spec in CATALOG:
        for depth in range(8, 15):
            tsi = contains_variant(spec, Tsirelson) is not None
            grid = geometric(depth) if tsi else make_grid(depth)
            if isinstance(spec, Stopped) and not grid.contains(spec.t_stop):
                grid = make_grid(depth + depth % 2)
            paths = enumerate_tree(TreeModel(grid))
            fd = tree_conditional_drift(TreeModel(grid), spec)
            _, rates = particle_inputs(spec, paths)
            e = float(np.dot(paths.weights, 0.5 * np.einsum("nkd,k->n", rates**2, grid.dt)))
            f = float(np.dot(paths.weights, fd.energy()))
            le = f <= e + 1e-12
            if isinstance(spec, (Zero, ConstantShift)):
                good = le and abs(e - f) <= 1e-12
            elif tsi:
                # "equality only for Zero/ConstantShift": strict for the non-invertible family
                good = le and e - f > 1e-12
            else:
                # linear feedback is invertible (criterion 3), so equality is expected there
                good = le
            ok &= good
            if depth in (8, 14) or not good:
                lines.append(f"{name}@{depth} E={e:.15g} H={f:.15g} diff={e - f:.3g}{'' if good else ' <-'}")
    verdict("6 filtered energy <= drift energy, equality only for zero/shift", ok, "; ".join(lines))
    assert ok


def test_criterion_7_innovation_is_brownian(verdict):
    lines, ok = [], True
    for name, spec, grid in (("linear_feedback", LinearFeedback(1.0), make_grid(64)),
                             ("tsirelson", Tsirelson(0.5, 3), geometric(64))):
        paths = sample_brownian(grid, seed=7, count=N_MC)
        transformed, rates = particle_inputs(spec, paths)
        config = FilterConfig()
        fd = particle_filtered_drift_multi(spec, paths, config, [config.resolved_k(N_MC)],
                                           inputs=(transformed, rates))[0]
        rep = innovation_bm_test(innovation_path(SamplePath(grid, transformed), fd), sigmas=4)
        ok &= rep.passed
        d = rep.to_dict()
        lines.append(f"{name}: max|z| mean {d['max_abs_z_mean']:.2f} var {d['max_abs_z_var']:.2f} "
                     f"corr {d['max_abs_z_corr']:.2f}")
    verdict("7 innovation mean/var/lag-1 tests at 4 sigma", ok, "; ".join(lines))
    assert ok


def test_criterion_8_particle_matches_tree(verdict):
    cases = [(TreeModel(make_grid(10)), Zero()), (TreeModel(make_grid(10)), ConstantShift(1.0)),
             (TreeModel(make_grid(10)), LinearFeedback(1.0)), (TreeModel(geometric(10)), Tsirelson(0.5, 3)),
             (TreeModel(make_grid(6), "gauss_hermite", 3), LinearFeedback(1.0)),
             (TreeModel(geometric(6), "gauss_hermite", 3), Tsirelson(0.5, 3))]
    worst = 0.0
    config = FilterConfig(features="history", neighbors="radius")
    for model, spec in cases:
        exact = tree_conditional_drift(model, spec).values
        part = particle_filtered_drift(spec, enumerate_tree(model), config).values
        worst = max(worst, float(np.max(np.abs(part - exact))))
    ok = worst <= 1e-9
    verdict("8 particle filter on tree ensemble = tree exact", ok, f"max abs diff {worst:.2e} over {len(cases)} cases")
    assert ok


def test_criterion_9_determinism(tmp_path, verdict):
    commands = [
        ["diagnose", "--drift", "linear-feedback:a=1", "--n", "32", "--N", "5000", "--seed", "9"],
        ["diagnose", "--drift", "tsirelson:ratio=0.5,kmax=3", "--oracle", "tree", "--depth", "10"],
        ["invert", "--drift", "linear-feedback:a=1", "--n", "64", "--N", "500", "--method", "picard"],
        ["oracle", "--drift", "tsirelson:ratio=0.5,kmax=3", "--depth", "8"],
        ["innovation", "--drift", "tsirelson:ratio=0.5,kmax=3", "--n", "16", "--N", "5000", "--seed", "3"],
        ["refine", "--drift", "linear-feedback:a=1", "--ns", "8,16", "--N", "3000"],
    ]
    bad = []
    for i, cmd in enumerate(commands):
        dirs = []
        for run, threads in enumerate(("1", "1", "4")):
            d = tmp_path / f"c{i}_{run}"
            assert main([*cmd, "--out", str(d), "--threads", threads]) == 0
            dirs.append(d)
        for other in dirs[1:]:
            cmp = filecmp.dircmp(dirs[0], other)
            same = not (cmp.left_only or cmp.right_only) and all(
                (dirs[0] / f).read_bytes() == (other / f).read_bytes() for f in cmp.common_files)
            if not same:
                bad.append(cmd[0])
    ok = not bad
    verdict("9 CLI reruns byte-identical across --threads", ok,
            f"{len(commands)} commands x 3 runs" + (f"; differing: {bad}" if bad else ""))
    assert ok
