"""Structured cell-centered grids on the unit square and the fields living on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on [0,1] x [0,1].

    ``nx`` and ``ny`` count cells; unknowns live at cell centers and are
    stored row-major (x fastest, then y).
    """

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one cell per axis, got {self.nx}x{self.ny}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    def cell_centers_x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    def cell_centers_y(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def cell_index(self, i: int, j: int) -> int:
        """Flat index of cell (i, j) with i along x, j along y."""
        return j * self.nx + i


@dataclass(frozen=True)
class Snapshot:
    """A discretized solution field: one value per cell, row-major."""

    values: np.ndarray
    grid: GridSpec = field(compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size != self.grid.n_cells:
            raise ValueError(
                f"snapshot length {values.size} does not match grid "
                f"{self.grid.nx}x{self.grid.ny} = {self.grid.n_cells}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("snapshot contains non-finite values")

    def as_matrix(self) -> np.ndarray:
        """Field reshaped to (ny, nx), row j = line of constant y."""
        return self.values.reshape(self.grid.ny, self.grid.nx)


def interpolate_to_grid(snap: Snapshot, target: GridSpec) -> Snapshot:
    """Bilinear interpolation of a snapshot onto another grid's cell centers.

    Points outside the source cell-center hull (a half-cell rim) are linearly
    extrapolated. Identical grids are returned as-is.
    """
    if snap.grid == target:
        return snap
    interp = RegularGridInterpolator(
        (snap.grid.cell_centers_y(), snap.grid.cell_centers_x()),
        snap.as_matrix(),
        method="linear",
        bounds_error=False,
        fill_value=None,
    )
    xt, yt = np.meshgrid(target.cell_centers_x(), target.cell_centers_y())
    values = interp(np.column_stack([yt.ravel(), xt.ravel()]))
    return Snapshot(values=values, grid=target)


def sample_at_points(snap: Snapshot, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of a snapshot at arbitrary (x, y) points."""
    interp = RegularGridInterpolator(
        (snap.grid.cell_centers_y(), snap.grid.cell_centers_x()),
        snap.as_matrix(),
        method="linear",
        bounds_error=False,
        fill_value=None,
    )
    return interp(np.column_stack([np.asarray(ys, float), np.asarray(xs, float)]))
