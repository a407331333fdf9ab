import numpy as np
import pytest

from wienerlab.drifts import ConstantShift, LinearFeedback, Scaled, Tsirelson, Zero
from wienerlab.entropy import (DiagnosticReport, decide, entropy_via_filter, entropy_via_inverse, gap_non_increasing,
                               invertibility_gap, kinetic_energy, refinement_study)
from wienerlab.filtering import FilterConfig
from wienerlab.grid import make_grid
from wienerlab.stats import McEstimate
from wienerlab.tree import TreeModel


def _gap(mean, se):
    return McEstimate(mean, se, 1000)


@pytest.mark.parametrize("mean,se,margin,verdict", [
    (0.0, 0.0, 0.0, "invertible-consistent"),
    (0.01, 0.004, 0.0, "invertible-consistent"),
    (0.03, 0.005, 0.0, "non-invertible"),
    (0.02, 0.005, 0.0, "inconclusive"),
    (0.02, 0.005, 0.01, "invertible-consistent"),
    (-0.02, 0.005, 0.0, "inconclusive"),
    (1e-13, 0.0, 0.0, "invertible-consistent"),
])
def test_decide(mean, se, margin, verdict):
    assert decide(_gap(mean, se), margin) == verdict


def test_zero_drift_everything_vanishes():
    rep = invertibility_gap(Zero(), make_grid(64), 10_000, seed=1)
    assert rep.energy.mean == 0.0 and rep.gap.mean == 0.0 and rep.gap.stderr == 0.0
    assert rep.verdict == "invertible-consistent"


def test_constant_shift_exact(geo12):
    g = make_grid(64)
    e = kinetic_energy(ConstantShift(1.0), g, 2000, seed=0)
    assert e.mean == pytest.approx(0.5, abs=1e-14) and e.stderr == 0.0
    assert entropy_via_filter(ConstantShift(1.0), g, 2000).mean == pytest.approx(0.5, abs=1e-14)
    assert entropy_via_inverse(ConstantShift(1.0), g, 2000).mean == pytest.approx(0.5, abs=1e-14)


def test_linear_feedback_discrete_energy_on_tree():
    # E[W(t_k)^2] = t_k, so the exact discrete energy is 1/2 sum_k t_k dt_k
    g = make_grid(10)
    tree = TreeModel(g)
    e = kinetic_energy(LinearFeedback(1.0), g, tree=tree)
    assert e.exact
    assert e.mean == pytest.approx(0.5 * np.dot(g.points[:-1], g.dt), abs=1e-14)
    rep = invertibility_gap(LinearFeedback(1.0), g, tree=tree)
    assert abs(rep.gap.mean) <= 1e-12 and rep.bias_margin == 0.0
    assert rep.entropy_inverse.mean == pytest.approx(e.mean, abs=1e-14)


def test_tsirelson_tree_gap(geo12):
    tree = TreeModel(geo12)
    rep = invertibility_gap(Tsirelson(0.5, 3), geo12, tree=tree)
    assert rep.oracle == "tree" and rep.entropy_inverse is None
    assert rep.energy.mean > 0.1
    # the discrete map is triangular, hence injective on the tree
    assert abs(rep.gap.mean) <= 1e-12
    assert rep.entropy_filter.mean <= rep.energy.mean + 1e-12


def test_mc_report_fields_and_serialization():
    g = make_grid(16)
    rep = invertibility_gap(LinearFeedback(1.0), g, 4000, seed=2, config=FilterConfig(k_neighbors=40))
    assert rep.k_neighbors == 40 and rep.gap_2k is not None
    assert rep.bias_margin == pytest.approx(abs(rep.gap_2k.mean - rep.gap.mean))
    assert rep.gap.mean == pytest.approx(rep.energy.mean - rep.entropy_filter.mean, abs=1e-14)
    assert rep.gap.mean > 0
    d = rep.to_dict()
    assert d["verdict"] in ("invertible-consistent", "non-invertible", "inconclusive")
    assert d["solver"]["composition_left"] <= 1e-12
    row = rep.csv_row()
    assert len(row) == len(DiagnosticReport.CSV_FIELDS) and row[0] == 16


def test_gap_paired_estimate_is_tighter_than_difference():
    g = make_grid(32)
    rep = invertibility_gap(Scaled(0.5, LinearFeedback(1.0)), g, 5000, seed=4)
    assert rep.gap.stderr < np.hypot(rep.energy.stderr, rep.entropy_filter.stderr)


def test_refinement_study_order_and_monotonicity():
    grids = [make_grid(n) for n in (8, 16, 32)]
    reps = refinement_study(LinearFeedback(1.0), grids, N=3000, seed=1)
    assert [r.grid["n"] for r in reps] == [8, 16, 32]
    assert gap_non_increasing(reps)
    with pytest.raises(ValueError):
        refinement_study(Zero(), grids[::-1], N=3000)


def test_gap_non_increasing_detects_growth():
    class R:
        def __init__(self, m):
            self.gap, self.bias_margin = McEstimate(m, 0.001, 1000), 0.0
    assert not gap_non_increasing([R(0.01), R(0.05)])
    assert gap_non_increasing([R(0.05), R(0.01)])


def test_guards():
    g = make_grid(8)
    with pytest.raises(ValueError):
        kinetic_energy(Zero(), g, 100)
    with pytest.raises(ValueError):
        kinetic_energy(Zero(), g, tree=TreeModel(make_grid(9)))
