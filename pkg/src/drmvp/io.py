"""CSV and JSON file contracts.  Floats are written with 17 significant digits
so files round-trip exactly and identical runs give identical bytes."""

from __future__ import annotations

import csv
import hashlib
import json
import re
from pathlib import Path

import numpy as np

from .market_sim import TickPanel


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_table(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) for v in row])
    return path


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        return header, [row for row in rd]


def read_columns(path) -> dict:
    """Columns as numpy arrays (float where possible)."""
    header, rows = read_table(path)
    cols = {}
    for k, name in enumerate(header):
        vals = [r[k] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals)
    return cols


def write_matrix(path, mat) -> Path:
    mat = np.asarray(mat, float)
    header = ["row"] + [f"c{j}" for j in range(mat.shape[1])]
    return write_table(path, header, ([i, *mat[i]] for i in range(mat.shape[0])))


def read_matrix(path) -> np.ndarray:
    _, rows = read_table(path)
    return np.array([[float(v) for v in r[1:]] for r in rows])


def write_day_matrices(path, mats) -> Path:
    """Stack of daily matrices in long form ``day,row,col,value``."""
    mats = np.asarray(mats, float)
    n, p, _ = mats.shape
    rows = ((d, i, j, mats[d, i, j]) for d in range(n) for i in range(p) for j in range(p))
    return write_table(path, ["day", "row", "col", "value"], rows)


def read_day_matrices(path) -> np.ndarray:
    c = read_columns(path)
    d, i, j = (c[k].astype(int) for k in ("day", "row", "col"))
    out = np.zeros((d.max() + 1, i.max() + 1, j.max() + 1))
    out[d, i, j] = c["value"]
    return out


def write_day_vectors(path, vecs, name: str, extra: dict | None = None) -> Path:
    """Long form ``day,asset,<name>[,extra...]`` for a ``(days, p)`` array."""
    vecs = np.asarray(vecs, float)
    extra = extra or {}
    header = ["day", "asset", name, *extra]
    rows = ([d, i, vecs[d, i], *(extra[k][d, i] for k in extra)]
            for d in range(vecs.shape[0]) for i in range(vecs.shape[1]))
    return write_table(path, header, rows)


def to_panel(cols: dict, key: str, day_key: str = "day") -> np.ndarray:
    d = cols[day_key].astype(int)
    a = cols["asset"].astype(int)
    days = np.unique(d)
    out = np.full((days.size, a.max() + 1), np.nan)
    out[np.searchsorted(days, d), a] = cols[key]
    return out


def write_ticks(path, ticks: TickPanel) -> Path:
    def rows():
        for i in range(ticks.p):
            for d in range(ticks.days):
                for t, y in zip(ticks.times[i][d], ticks.prices[i][d]):
                    yield i, d, t, y
    return write_table(path, ["asset_id", "day", "timestamp_frac", "log_price"], rows())


def read_ticks(path) -> TickPanel:
    c = read_columns(path)
    a = c["asset_id"].astype(int)
    d = c["day"].astype(int)
    p, n = a.max() + 1, d.max() + 1
    order = np.lexsort((c["timestamp_frac"], d, a))
    a, d, t, y = a[order], d[order], c["timestamp_frac"][order], c["log_price"][order]
    times = [[None] * n for _ in range(p)]
    prices = [[None] * n for _ in range(p)]
    key = a * n + d
    bounds = np.searchsorted(key, np.arange(p * n + 1))
    for i in range(p):
        for k in range(n):
            lo, hi = bounds[i * n + k], bounds[i * n + k + 1]
            times[i][k] = t[lo:hi]
            prices[i][k] = y[lo:hi]
    return TickPanel(times, prices)


def day_files(directory, prefix: str = "day_") -> list[tuple[int, Path]]:
    pat = re.compile(rf"{prefix}(\d+)\.csv$")
    out = []
    for f in Path(directory).iterdir():
        m = pat.match(f.name)
        if m:
            out.append((int(m.group(1)), f))
    return sorted(out)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()
