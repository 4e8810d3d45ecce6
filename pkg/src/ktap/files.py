"""CSV, steady-state and plot-data files.

Numbers are written with 17 significant digits (``%.17g``) so doubles
round-trip exactly; lines end in LF.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .earlywarning import DbsSeries, ReferenceDistribution
from .integrator import Trajectory


def num(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _write(path: Path, text: str) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def state_columns(m: int, n: int) -> list[str]:
    return [f"f_{p}_{i}" for p in range(1, m + 1) for i in range(1, n + 1)]


def trajectory_header(m: int, n: int, with_dbs: bool = False) -> list[str]:
    cols = ["t", *state_columns(m, n), "mass", "U", "S", "gamma"]
    return cols + ["dBS"] if with_dbs else cols


def write_trajectory_csv(path, traj: Trajectory, dbs: DbsSeries | None = None) -> Path:
    _, m, n = traj.states.shape
    lines = [",".join(trajectory_header(m, n, dbs is not None))]
    for j, t in enumerate(traj.times):
        row = [num(t), *(num(x) for x in traj.states[j].ravel()),
               num(traj.mass[j]), num(traj.mean_wealth[j]), num(traj.S[j]), num(int(traj.gamma[j]))]
        if dbs is not None:
            row.append(num(dbs.d[j]))
        lines.append(",".join(row))
    return _write(path, "\n".join(lines) + "\n")


def write_dbs_csv(path, series: DbsSeries) -> Path:
    lines = ["t,dBS", *(f"{num(t)},{num(d)}" for t, d in zip(series.t, series.d))]
    return _write(path, "\n".join(lines) + "\n")


def write_steady_state(path, f: np.ndarray, meta: dict) -> Path:
    """``# key = value`` metadata lines followed by one ``f_<p>_<i> = value`` per line."""
    f = np.atleast_2d(np.asarray(f, dtype=float))
    m, n = f.shape
    lines = ["# ktap steady state"]
    for key, value in {"n": n, "m": m, **meta}.items():
        text = num(value) if isinstance(value, (int, float, np.number)) else str(value)
        lines.append(f"# {key} = {text}".rstrip())
    for p in range(m):
        for i in range(n):
            lines.append(f"f_{p + 1}_{i + 1} = {num(f[p, i])}")
    return _write(path, "\n".join(lines) + "\n")


def read_steady_state(path) -> tuple[ReferenceDistribution, dict]:
    """Read a steady-state file as a reference distribution plus its metadata."""
    meta: dict[str, str] = {}
    values: dict[tuple[int, int], float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            key, sep, value = line.partition("=")
            parts = key.strip().split("_")
            if not sep or len(parts) != 3 or parts[0] != "f":
                raise ValueError(f"{path}:{lineno}: expected 'f_<p>_<i> = value'")
            values[(int(parts[1]), int(parts[2]))] = float(value)
    if not values:
        raise ValueError(f"{path}: no occupancies found")
    m = max(p for p, _ in values)
    n = max(i for _, i in values)
    if "m" in meta and int(meta["m"]) != m or "n" in meta and int(meta["n"]) != n:
        raise ValueError(f"{path}: header sizes disagree with the entries")
    if len(values) != m * n:
        raise ValueError(f"{path}: expected {m * n} entries, found {len(values)}")
    f = np.zeros((m, n))
    for (p, i), v in values.items():
        f[p - 1, i - 1] = v
    return ReferenceDistribution(f, provenance=meta.get("provenance", str(path))), meta


def write_plotdata(out_dir, traj: Trajectory, dbs: DbsSeries | None, lattice_v: np.ndarray) -> list[Path]:
    """Bare columnar data for plotting, with a JSON sidecar describing it."""
    out_dir = Path(out_dir)
    final = traj.states[-1]
    m, n = final.shape
    u = traj.grid.u
    rows = ["i,u," + ",".join(f"f_{p}" for p in range(1, m + 1)) + ",total"]
    for i in range(n):
        rows.append(",".join([str(i + 1), num(u[i]), *(num(final[p, i]) for p in range(m)), num(final[:, i].sum())]))
    steady = _write(out_dir / "plot_steady.csv", "\n".join(rows) + "\n")

    rows = ["p,v,mass"] + [f"{p + 1},{num(lattice_v[p])},{num(final[p].sum())}" for p in range(m)]
    subsystems = _write(out_dir / "plot_subsystems.csv", "\n".join(rows) + "\n")

    cols = ["t", "mass", "U", "S", "gamma"] + (["dBS"] if dbs is not None else [])
    rows = [",".join(cols)]
    for j, t in enumerate(traj.times):
        row = [num(t), num(traj.mass[j]), num(traj.mean_wealth[j]), num(traj.S[j]), num(int(traj.gamma[j]))]
        if dbs is not None:
            row.append(num(dbs.d[j]))
        rows.append(",".join(row))
    series = _write(out_dir / "plot_series.csv", "\n".join(rows) + "\n")

    sidecar = {
        "plot_steady.csv": {
            "description": "final occupancy per wealth class; f_<p> is subsystem p, total sums over p",
            "columns": {"i": "wealth class (1-based)", "u": "class value in [-1, 1]"},
            "suggested": "bar chart of f_<p> (or total) against u",
        },
        "plot_subsystems.csv": {
            "description": "final mass per functional subsystem",
            "columns": {"p": "subsystem (1-based)", "v": "stance, -1 strongest opposition", "mass": "sum over classes"},
        },
        "plot_series.csv": {
            "description": "macroscopic time series at trajectory samples",
            "columns": {"t": "time", "mass": "total mass", "U": "mean wealth", "S": "social gap",
                        "gamma": "critical distance", **({"dBS": "distance from reference"} if dbs is not None else {})},
        },
    }
    side = _write(out_dir / "plotdata.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return [steady, subsystems, series, side]
