"""Uniform cell-centred rectangular grid on [0, Lx] x [0, Ly].

Cells are numbered row-major: ``cell = j * nx + i`` with ``i`` the x index and
``j`` the y index, so row ``j = 0`` is the bottom row. Interior faces are listed
x-normal first (``(nx - 1) * ny`` of them, row by row) and then y-normal
(``nx * (ny - 1)``). Every face normal points from its ``left`` cell to its
``right`` cell. Boundary faces carry no-flow conditions and are not stored.

Fields living on a grid are plain numpy arrays: one value per cell for scalar
fields, shape ``(ncells, 2)`` for vector fields and one value per interior face
for face fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    Lx: float
    Ly: float
    centers: np.ndarray = field(repr=False)
    volumes: np.ndarray = field(repr=False)
    face_left: np.ndarray = field(repr=False)
    face_right: np.ndarray = field(repr=False)
    face_normal: np.ndarray = field(repr=False)
    face_area: np.ndarray = field(repr=False)
    face_center: np.ndarray = field(repr=False)
    face_axis: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def x_edges(self) -> np.ndarray:
        return np.arange(self.nx + 1) * self.dx

    @property
    def y_edges(self) -> np.ndarray:
        return np.arange(self.ny + 1) * self.dy

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def nfaces(self) -> int:
        return self.face_left.size

    @property
    def face_distance(self) -> np.ndarray:
        """Centre-to-centre distance across each interior face."""
        return np.where(self.face_axis == 0, self.dx, self.dy)

    def cell_index(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def cell_ij(self, cell):
        cell = np.asarray(cell)
        return cell % self.nx, cell // self.nx

    def as_image(self, values) -> np.ndarray:
        """Reshape a cell field to ``(ny, nx)``, bottom row first."""
        return np.asarray(values).reshape(self.ny, self.nx)

    def check_cell_field(self, values, ncomp: int = 1) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        shape = (self.ncells,) if ncomp == 1 else (self.ncells, ncomp)
        if values.shape != shape:
            raise ValueError(f"cell field has shape {values.shape}, expected {shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("cell field contains non-finite values")
        return values

    def check_face_field(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.nfaces,):
            raise ValueError(
                f"face field has shape {values.shape}, expected ({self.nfaces},)"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("face field contains non-finite values")
        return values

    def divergence(self, face_values) -> np.ndarray:
        """Net outward integrated flux per cell for a face field.

        Boundary faces contribute nothing (no-flow), so the cell sum telescopes
        to zero.
        """
        face_values = np.asarray(face_values, dtype=float)
        return (np.bincount(self.face_left, face_values, self.ncells)
                - np.bincount(self.face_right, face_values, self.ncells))


def build_grid(nx: int, ny: int, Lx: float, Ly: float) -> Grid:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (Lx > 0 and Ly > 0) or not np.isfinite(Lx) or not np.isfinite(Ly):
        raise ValueError(f"domain lengths must be positive, got Lx={Lx}, Ly={Ly}")
    nx, ny = int(nx), int(ny)
    Lx, Ly = float(Lx), float(Ly)
    dx, dy = Lx / nx, Ly / ny

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    centers = np.column_stack([(ii.ravel() + 0.5) * dx, (jj.ravel() + 0.5) * dy])
    volumes = np.full(nx * ny, dx * dy)

    # x-normal faces between (i, j) and (i + 1, j)
    ix, jx = np.meshgrid(np.arange(nx - 1), np.arange(ny))
    left_x = (jx * nx + ix).ravel()
    right_x = left_x + 1
    # y-normal faces between (i, j) and (i, j + 1)
    iy, jy = np.meshgrid(np.arange(nx), np.arange(ny - 1))
    left_y = (jy * nx + iy).ravel()
    right_y = left_y + nx

    face_left = np.concatenate([left_x, left_y]).astype(np.int64)
    face_right = np.concatenate([right_x, right_y]).astype(np.int64)
    face_axis = np.concatenate(
        [np.zeros(left_x.size, dtype=np.int8), np.ones(left_y.size, dtype=np.int8)]
    )
    face_normal = np.zeros((face_left.size, 2))
    face_normal[face_axis == 0, 0] = 1.0
    face_normal[face_axis == 1, 1] = 1.0
    face_area = np.where(face_axis == 0, dy, dx).astype(float)
    face_center = 0.5 * (centers[face_left] + centers[face_right])

    arrays = (centers, volumes, face_left, face_right, face_normal, face_area,
              face_center, face_axis)
    for a in arrays:
        a.setflags(write=False)
    return Grid(nx, ny, Lx, Ly, *arrays)


def locate_cell(g: Grid, x) -> int:
    """Index of the cell whose closed box contains ``x``.

    Points on an internal edge go to the cell with the larger index.
    """
    px, py = float(x[0]), float(x[1])
    if not (0.0 <= px <= g.Lx and 0.0 <= py <= g.Ly):
        raise ValueError(f"point ({px}, {py}) lies outside [0, {g.Lx}] x [0, {g.Ly}]")
    i = min(int(np.searchsorted(g.x_edges, px, side="right")) - 1, g.nx - 1)
    j = min(int(np.searchsorted(g.y_edges, py, side="right")) - 1, g.ny - 1)
    return j * g.nx + i


def _axis_gradient(img: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Least-squares slope along one axis from the (up to two) face neighbours."""
    n = img.shape[axis]
    out = np.zeros_like(img)
    if n == 1:
        return out
    a = np.moveaxis(img, axis, 0)
    o = np.moveaxis(out, axis, 0)
    if n > 2:
        o[1:-1] = (a[2:] - a[:-2]) / (2.0 * h)
    o[0] = (a[1] - a[0]) / h
    o[-1] = (a[-1] - a[-2]) / h
    return out


def cell_gradient(g: Grid, values) -> np.ndarray:
    """Least-squares cell gradients, shape ``(ncells, 2)``.

    Face neighbours are axis-aligned, so the normal equations decouple per
    axis: interior cells get central differences, boundary cells one-sided
    ones, and an axis with a single cell gets zero. Exact for affine fields.
    """
    img = g.as_image(np.asarray(values, dtype=float))
    gx = _axis_gradient(img, g.dx, 1).ravel()
    gy = _axis_gradient(img, g.dy, 0).ravel()
    return np.column_stack([gx, gy])
