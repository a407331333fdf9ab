import io
import math

import numpy as np
import pytest

from wienerlab.drifts import ConstantShift, LinearFeedback, Tsirelson, Zero
from wienerlab.girsanov import check_normalization, girsanov_weight, ito_sum, write_weights_csv
from wienerlab.grid import GridError, make_grid
from wienerlab.paths import CameronMartinPath, sample_brownian
from wienerlab.tree import TreeModel, enumerate_tree


def test_constant_shift_closed_form():
    g = make_grid(32)
    w = sample_brownian(g, seed=5, count=10)
    gw = girsanov_weight(ConstantShift(0.8), w, sign=-1)
    W1 = w.values[:, -1, 0]
    np.testing.assert_allclose(gw.log_weight, -0.8 * W1 - 0.5 * 0.64, atol=1e-13)
    np.testing.assert_allclose(gw.energy, 0.64, atol=1e-14)


def test_linear_feedback_left_point_sum(rng):
    g = make_grid(16)
    w = sample_brownian(g, seed=1, count=1)
    W = w.values[0, :, 0]
    ito = np.sum(W[:-1] * np.diff(W))
    energy = 0.5 * np.sum(W[:-1] ** 2 * g.dt)
    gw = girsanov_weight(LinearFeedback(1.0), w, sign=1)
    assert float(gw.ito[0]) == pytest.approx(ito, abs=1e-14)
    assert float(gw.log_weight[0]) == pytest.approx(ito - energy, abs=1e-14)


def test_zero_drift_weight_is_one():
    g = make_grid(8)
    gw = girsanov_weight(Zero(), sample_brownian(g, seed=0, count=5), sign=-1)
    np.testing.assert_array_equal(gw.weight, 1.0)


def test_exact_tree_expectation_of_shift_weight():
    # on a Rademacher tree E[exp(-h dW_k)] = cosh(h sqrt(dt_k)) exactly
    g = make_grid(10)
    h = 0.9
    paths = enumerate_tree(TreeModel(g))
    got = np.dot(paths.weights, girsanov_weight(ConstantShift(h), paths, sign=-1).weight)
    expect = math.prod(math.cosh(h * math.sqrt(dt)) * math.exp(-0.5 * h * h * dt) for dt in g.dt)
    assert got == pytest.approx(expect, rel=1e-13)


@pytest.mark.parametrize("spec,grid", [
    (ConstantShift(1.0), make_grid(32)),
    (LinearFeedback(1.0), make_grid(32)),
    (Tsirelson(0.5, 3), make_grid(32, "geometric", ratio=0.5, k_max=3)),
])
def test_normalization_covers_one(spec, grid):
    est = check_normalization(spec, grid, 20_000, seed=11, chunk=7000)
    assert est.covers(1.0, sigmas=4)


def test_normalization_independent_of_chunking_and_threads():
    g = make_grid(16)
    a = check_normalization(LinearFeedback(1.0), g, 5000, seed=2, chunk=5000)
    b = check_normalization(LinearFeedback(1.0), g, 5000, seed=2, chunk=1234, threads=2)
    assert a == b


def test_normalization_needs_samples():
    with pytest.raises(ValueError):
        check_normalization(Zero(), make_grid(4), 10)


def test_ito_sum_grid_mismatch():
    with pytest.raises(GridError):
        ito_sum(CameronMartinPath.constant(make_grid(4)), sample_brownian(make_grid(5)))


def test_weights_csv_roundtrip():
    g = make_grid(8)
    gw = girsanov_weight(LinearFeedback(1.0), sample_brownian(g, seed=3, count=4), sign=-1)
    buf = io.StringIO()
    write_weights_csv(buf, gw)
    lines = buf.getvalue().split("\r\n")
    assert lines[0] == "path_id,log_weight,weight"
    logs = [float(r.split(",")[1]) for r in lines[1:5]]
    assert logs == gw.log_weight.tolist()
