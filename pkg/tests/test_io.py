import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wienerlab.filtering import FilteredDrift
from wienerlab.grid import make_grid
from wienerlab.io import (MAGIC, dump_json, read_batch, read_filtered_batch, read_path_csv, read_paths_batch,
                          write_filtered_batch, write_path_csv, write_paths_batch, write_rows)
from wienerlab.paths import sample_brownian


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(1, 3), st.integers(0, 2**31))
def test_path_csv_roundtrip_is_exact(n, d, seed):
    p = sample_brownian(make_grid(n), dim=d, seed=seed, count=1)[0]
    buf = io.StringIO(newline="")
    write_path_csv(buf, p)
    buf.seek(0)
    back = read_path_csv(buf)
    np.testing.assert_array_equal(back.values, p.values)
    assert back.grid == p.grid


def test_path_csv_header_and_line_endings():
    p = sample_brownian(make_grid(2), dim=2, seed=0, count=1)[0]
    buf = io.StringIO(newline="")
    write_path_csv(buf, p)
    text = buf.getvalue()
    assert text.startswith("t,W_1,W_2\r\n0.0,0.0,0.0\r\n")
    assert text.count("\r\n") == 4


def test_paths_batch_roundtrip_and_layout():
    g = make_grid(5)
    p = sample_brownian(g, dim=2, seed=77, count=3)
    buf = io.BytesIO()
    write_paths_batch(buf, p)
    raw = buf.getvalue()
    assert raw[:8] == MAGIC
    assert np.frombuffer(raw[8:48], dtype="<u8").tolist() == [5, 2, 3, 77, 0]
    assert len(raw) == 8 + 40 + 8 * 6 + 8 * 3 * 6 * 2
    buf.seek(0)
    back = read_paths_batch(buf)
    np.testing.assert_array_equal(back.values, p.values)
    assert back.seed == 77 and back.grid == g


def test_filtered_batch_roundtrip():
    g = make_grid(4)
    fd = FilteredDrift(g, np.arange(8.0).reshape(2, 4, 1), "tree-exact")
    buf = io.BytesIO()
    write_filtered_batch(buf, fd, seed=5)
    buf.seek(0)
    back = read_filtered_batch(buf)
    assert back.estimator == "tree-exact"
    np.testing.assert_array_equal(back.values, fd.values)
    buf.seek(0)
    with pytest.raises(ValueError):
        read_paths_batch(buf)


def test_bad_magic():
    with pytest.raises(ValueError):
        read_batch(io.BytesIO(b"NOTMAGIC" + bytes(40)))


def test_write_rows_full_precision():
    buf = io.StringIO(newline="")
    write_rows(buf, ["a", "b"], [[0.1 + 0.2, 1 / 3], ["x,y", 2]])
    lines = buf.getvalue().split("\r\n")
    assert float(lines[1].split(",")[0]) == 0.1 + 0.2
    assert lines[2] == '"x,y",2'


def test_dump_json_cleans_numpy():
    text = dump_json({"b": np.float64(1.5), "a": np.array([1, 2]), "c": float("nan"), "d": np.bool_(True)})
    assert json.loads(text) == {"b": 1.5, "a": [1, 2], "c": None, "d": True}
    assert text.index('"b"') < text.index('"a"')
    assert text.endswith("\n")
