"""CSV and JSON artifacts written by experiment runs.

Floats are written with 17 significant digits so that reading a file
back reproduces the in-memory doubles exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .core import GridField, Solution, SpaceTimeGrid

HISTORY_COLUMNS = (
    "iter",
    "loss_fp",
    "loss_hjb",
    "loss_policy",
    "linf_rho",
    "linf_phi",
    "linf_q",
    "relerr_rho",
    "relerr_phi",
)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.17g}"


def write_history(path, rows, extra_columns=()) -> None:
    """Write history rows (dicts); missing or NaN metrics become empty cells."""
    cols = list(HISTORY_COLUMNS) + list(extra_columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in cols])


def read_csv_columns(path) -> dict[str, np.ndarray]:
    """Columns of a CSV as float arrays; empty cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(c) if c != "" else np.nan for c in row] for row in reader]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def solution_columns(d: int) -> list[str]:
    xs = ["x"] if d == 1 else [f"x{k + 1}" for k in range(d)]
    qs = ["q"] if d == 1 else [f"q{k + 1}" for k in range(d)]
    return ["t", *xs, "rho", "phi", *qs]


def write_solution(path, sol: Solution) -> None:
    """One row per space-time node: ``t, x.., rho, phi, q..``."""
    g = sol.grid
    t = np.repeat(g.times(), g.n_space)
    x = np.tile(g.coords(), (g.N + 1, 1))
    q = sol.q_array().reshape(-1, g.d)
    write_points(path, t, x, sol.rho.values.ravel(), sol.phi.values.ravel(), q)


def write_points(path, t, x, rho, phi, q) -> None:
    d = x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(solution_columns(d))
        for row in np.column_stack([t, x, rho, phi, q]):
            w.writerow([f"{v:.17g}" for v in row])


def read_solution(path, grid: SpaceTimeGrid) -> Solution:
    cols = read_csv_columns(path)
    d = grid.d
    names = solution_columns(d)
    missing = [c for c in names if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    shape = (grid.N + 1, grid.n_space)
    rho = cols["rho"].reshape(shape)
    phi = cols["phi"].reshape(shape)
    q = np.stack([cols[c] for c in names[-d:]], axis=-1).reshape(shape + (d,))
    qf = GridField(grid, q[..., 0]) if d == 1 else GridField(grid, q, channels=d)
    return Solution(GridField(grid, rho), GridField(grid, phi), qf)


def write_manifest(path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
