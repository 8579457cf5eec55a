"""Writers for time series, ASCII field snapshots and PGM heatmaps."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grid import Grid
from .transport import SERIES_COLUMNS, SimulationResult


def _g17(v) -> str:
    return format(float(v), ".17g")


def write_series_csv(result: SimulationResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SERIES_COLUMNS)
        n = len(result.series["step"])
        for m in range(n):
            row = []
            for name in SERIES_COLUMNS:
                v = result.series[name][m]
                row.append(str(int(v)) if name == "step" else _g17(v))
            wr.writerow(row)


def format_grid(g: Grid, values, t: float) -> str:
    """Header ``nx ny Lx Ly t``, then ``ny`` rows of ``nx`` values, bottom row first."""
    img = g.as_image(np.asarray(values, dtype=float))
    lines = [" ".join([str(g.nx), str(g.ny), _g17(g.Lx), _g17(g.Ly), _g17(t)])]
    lines += [" ".join(_g17(v) for v in row) for row in img]
    return "\n".join(lines) + "\n"


def write_grid(g: Grid, values, t: float, path: str | Path) -> None:
    Path(path).write_text(format_grid(g, values, t))


def read_grid(path: str | Path) -> tuple[tuple[int, int, float, float, float], np.ndarray]:
    """Inverse of :func:`write_grid`: header tuple and cell values in grid order."""
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    nx, ny = int(head[0]), int(head[1])
    Lx, Ly, t = (float(v) for v in head[2:5])
    rows = [list(map(float, ln.split())) for ln in lines[1:1 + ny]]
    img = np.array(rows)
    if img.shape != (ny, nx):
        raise ValueError(f"snapshot body has shape {img.shape}, expected {(ny, nx)}")
    return (nx, ny, Lx, Ly, t), img.ravel()


def pgm_bytes(g: Grid, values) -> bytes:
    """Binary P5 8-bit image; [0, 1] maps linearly to [0, 255] after clamping.

    Image rows run top to bottom, so the top grid row is written first.
    """
    img = g.as_image(np.clip(np.asarray(values, dtype=float), 0.0, 1.0))[::-1]
    pix = np.rint(img * 255.0).astype(np.uint8)
    return f"P5\n{g.nx} {g.ny}\n255\n".encode("ascii") + pix.tobytes()


def write_pgm(g: Grid, values, path: str | Path) -> None:
    Path(path).write_bytes(pgm_bytes(g, values))


def write_simulation(result: SimulationResult, directory: str | Path, pgm: bool = False
                     ) -> list[Path]:
    """Write ``series.csv`` and the requested snapshots; returns the written paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "series.csv"]
    write_series_csv(result, written[0])
    g = result.grid
    nt = len(result.p)
    for s in result.snapshot_steps:
        t = float(result.times[s])
        paths = [out / f"c_{s}.grid"]
        write_grid(g, result.c[s], t, paths[0])
        if s >= 1:
            # pressure is computed at the start of each step; step s uses p of step s
            paths.append(out / f"p_{s}.grid")
            write_grid(g, result.p[min(s, nt) - 1], t, paths[-1])
        if pgm:
            paths.append(out / f"c_{s}.pgm")
            write_pgm(g, result.c[s], paths[-1])
        written += paths
    return written
