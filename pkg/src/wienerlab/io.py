"""CSV, binary batch and JSON formats.

Binary batch layout (all little-endian)::

    8 bytes   magic b"WLBATCH1"
    5 x u64   n, d, count, seed, tag
    (n+1) x f64   grid times
    count x rows x d x f64   data

``tag`` is 0 for paths (rows = n + 1), 1 for a tree-exact filtered drift
and 2 for a particle filtered drift (rows = n).
"""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

from .filtering import FilteredDrift
from .grid import TimeGrid
from .paths import SamplePath

MAGIC = b"WLBATCH1"
TAG_PATHS, TAG_TREE, TAG_PARTICLE = 0, 1, 2
_ESTIMATOR_TAGS = {"tree-exact": TAG_TREE, "particle": TAG_PARTICLE}
_HEADER = struct.Struct("<5Q")


def fmt(x) -> str:
    """Shortest round-trip text for a float (or an int / string unchanged)."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_writer(fh):
    return csv.writer(fh, lineterminator="\r\n")


def write_rows(fh, header, rows) -> None:
    w = csv_writer(fh)
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])


def write_path_csv(fh, path: SamplePath) -> None:
    """One row per grid point: t, W_1, ..., W_d."""
    if path.is_batch:
        raise ValueError("write one path at a time; use write_batch for batches")
    header = ["t"] + [f"W_{i + 1}" for i in range(path.dim)]
    write_rows(fh, header, ([t, *row] for t, row in zip(path.grid.points, path.values)))


def read_path_csv(fh) -> SamplePath:
    rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return SamplePath(TimeGrid(data[:, 0]), data[:, 1:])


def write_batch(fh, grid: TimeGrid, data: np.ndarray, seed: int | None, tag: int) -> None:
    data = np.ascontiguousarray(data, dtype="<f8")
    count, rows, d = data.shape
    expected = grid.n + 1 if tag == TAG_PATHS else grid.n
    if rows != expected:
        raise ValueError(f"tag {tag} needs {expected} rows per item, got {rows}")
    fh.write(MAGIC)
    fh.write(_HEADER.pack(grid.n, d, count, 0 if seed is None else int(seed), tag))
    fh.write(np.ascontiguousarray(grid.points, dtype="<f8").tobytes())
    fh.write(data.tobytes())


def write_paths_batch(fh, paths: SamplePath) -> None:
    p = paths.batched()
    write_batch(fh, p.grid, p.values, p.seed, TAG_PATHS)


def write_filtered_batch(fh, filtered: FilteredDrift, seed: int | None = None) -> None:
    write_batch(fh, filtered.grid, filtered.values, seed, _ESTIMATOR_TAGS[filtered.estimator])


def read_batch(fh) -> tuple[dict, TimeGrid, np.ndarray]:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ValueError("not a wienerlab batch file")
    n, d, count, seed, tag = _HEADER.unpack(fh.read(_HEADER.size))
    grid = TimeGrid(np.frombuffer(fh.read(8 * (n + 1)), dtype="<f8").copy())
    rows = n + 1 if tag == TAG_PATHS else n
    data = np.frombuffer(fh.read(8 * count * rows * d), dtype="<f8").reshape(count, rows, d).copy()
    return {"n": n, "d": d, "count": count, "seed": seed, "tag": tag}, grid, data


def read_paths_batch(fh) -> SamplePath:
    header, grid, data = read_batch(fh)
    if header["tag"] != TAG_PATHS:
        raise ValueError(f"batch holds tag {header['tag']}, not paths")
    return SamplePath(grid, data, seed=header["seed"])


def read_filtered_batch(fh) -> FilteredDrift:
    header, grid, data = read_batch(fh)
    names = {v: k for k, v in _ESTIMATOR_TAGS.items()}
    if header["tag"] not in names:
        raise ValueError(f"batch holds tag {header['tag']}, not a filtered drift")
    return FilteredDrift(grid, data, names[header["tag"]])


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"
