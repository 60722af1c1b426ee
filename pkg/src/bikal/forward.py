"""Forward models mapping parameter vectors to discretized solution fields.

Two concrete models are provided: a steady 2-D convection-diffusion solver on
a cell-centered finite-volume grid (the high/low fidelity pair used by the
surrogate), and a fixed linear map used as an exactly solvable test model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .grids import GridSpec, Snapshot


class SolverFailure(RuntimeError):
    """Raised when a forward solve cannot produce a valid field.

    Carries the offending parameter vector and, when a linear system was
    actually solved, the achieved residual norm.
    """

    def __init__(self, message: str, params: np.ndarray | None = None, residual: float | None = None):
        super().__init__(message)
        self.params = None if params is None else np.asarray(params, dtype=float)
        self.residual = residual


@runtime_checkable
class ForwardModel(Protocol):
    """Deterministic map from a parameter point to a solution snapshot."""

    param_dim: int
    grid: GridSpec

    @property
    def state_dim(self) -> int: ...

    @property
    def cost_weight(self) -> float: ...

    def evaluate(self, z: np.ndarray) -> Snapshot: ...


@dataclass(frozen=True)
class BoundaryModes:
    """Inflow-boundary profile parameterized by mode coefficients.

    The profile lives on the bottom-then-left boundary path, parameterized by
    arclength s: s = 1 - x on the bottom edge, s = 1 + y on the left edge, so
    the path is continuous through the (0, 0) corner. Boundary value at s is
    ``base + sum_i w_i * mode_i(s)`` with modes interpolated linearly between
    the stored arclength nodes.
    """

    arclength: np.ndarray
    modes: np.ndarray
    base: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.arclength, dtype=float)
        m = np.atleast_2d(np.asarray(self.modes, dtype=float))
        object.__setattr__(self, "arclength", s)
        object.__setattr__(self, "modes", m)
        if m.shape[1] != s.size:
            raise ValueError(f"{m.shape[0]} modes of length {m.shape[1]} vs {s.size} arclength nodes")
        if s.size >= 2 and not np.all(np.diff(s) > 0):
            raise ValueError("arclength nodes must be strictly increasing")

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    def values_at(self, s_query: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_modes,):
            raise ValueError(f"expected {self.n_modes} mode coefficients, got shape {coeffs.shape}")
        out = np.full(np.asarray(s_query, float).shape, self.base)
        for w, mode in zip(coeffs, self.modes):
            out = out + w * np.interp(s_query, self.arclength, mode)
        return out


@dataclass(frozen=True)
class ConvDiffConfig:
    """Settings for the steady convection-diffusion problem on the unit square.

    ``diffusivity`` None means the coefficient is read from the leading entry
    of the parameter vector; a float fixes it. When ``boundary_modes`` is set,
    the trailing parameter entries scale the boundary profile modes on the
    left/bottom sides (the right/top sides keep the scalar ``bc_high``).
    """

    velocity: tuple[float, float] = (1.0, 1.0)
    bc_low: float = 1.0
    bc_high: float = 0.0
    diffusivity: float | None = None
    boundary_modes: BoundaryModes | None = None
    scheme: str = "central"

    def __post_init__(self):
        if self.scheme not in ("central", "upwind"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not np.all(np.isfinite([self.bc_low, self.bc_high, *self.velocity])):
            raise ValueError("velocity and boundary values must be finite")

    @property
    def param_dim(self) -> int:
        d = 0 if self.diffusivity is not None else 1
        if self.boundary_modes is not None:
            d += self.boundary_modes.n_modes
        return d

    def split_params(self, z: np.ndarray) -> tuple[float, np.ndarray | None]:
        """Extract (diffusivity, boundary mode coefficients) from z."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != (self.param_dim,):
            raise ValueError(f"expected parameter vector of length {self.param_dim}, got shape {z.shape}")
        if self.diffusivity is None:
            diff, rest = float(z[0]), z[1:]
        else:
            diff, rest = float(self.diffusivity), z
        return diff, (rest if self.boundary_modes is not None else None)


def _boundary_values(config: ConvDiffConfig, grid: GridSpec, coeffs: np.ndarray | None):
    """Dirichlet face values: (bottom[nx], left[ny], right[ny], top[nx])."""
    xs, ys = grid.cell_centers_x(), grid.cell_centers_y()
    if config.boundary_modes is None:
        bottom = np.full(grid.nx, config.bc_low)
        left = np.full(grid.ny, config.bc_low)
    else:
        bottom = config.boundary_modes.values_at(1.0 - xs, coeffs)
        left = config.boundary_modes.values_at(1.0 + ys, coeffs)
    right = np.full(grid.ny, config.bc_high)
    top = np.full(grid.nx, config.bc_high)
    return bottom, left, right, top


def solve_convdiff(config: ConvDiffConfig, grid: GridSpec, z: np.ndarray) -> Snapshot:
    """Solve the steady convection-diffusion equation div(u T) - D lap(T) = 0.

    Second-order central differencing (optionally first-order upwind for the
    convective term) on a uniform cell-centered grid; Dirichlet conditions are
    imposed through ghost-cell linear extrapolation, which fixes the boundary
    face value exactly. The steady problem is linear in T, so the discrete
    system is assembled sparse and solved directly.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    diff, coeffs = config.split_params(z)
    if grid.nx < 2 or grid.ny < 2:
        raise SolverFailure(f"degenerate grid {grid.nx}x{grid.ny} for the FVM solver", params=z)
    if not np.isfinite(diff) or diff <= 0.0:
        raise SolverFailure(f"non-positive diffusivity {diff}", params=z)

    nx, ny = grid.nx, grid.ny
    hx, hy = grid.hx, grid.hy
    ux, uy = config.velocity
    fx, fy = ux * hy, uy * hx          # face mass fluxes
    dx, dy = diff * hy / hx, diff * hx / hy

    bottom, left, right, top = _boundary_values(config, grid, coeffs)

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()
    idx = jj * nx + ii
    n = nx * ny

    diag = np.zeros(n)
    rhs = np.zeros(n)
    rows, cols, vals = [], [], []

    def couple(mask, nbr_idx, coeff):
        rows.append(idx[mask])
        cols.append(nbr_idx[mask])
        vals.append(np.full(mask.sum(), coeff))

    if config.scheme == "central":
        a_e, a_w = fx / 2 - dx, -fx / 2 - dx
        a_n, a_s = fy / 2 - dy, -fy / 2 - dy
        p_e, p_w = fx / 2 + dx, -fx / 2 + dx
        p_n, p_s = fy / 2 + dy, -fy / 2 + dy
    else:  # upwind convective interior faces
        a_e, a_w = min(fx, 0.0) - dx, -max(fx, 0.0) - dx
        a_n, a_s = min(fy, 0.0) - dy, -max(fy, 0.0) - dy
        p_e, p_w = max(fx, 0.0) + dx, -min(fx, 0.0) + dx
        p_n, p_s = max(fy, 0.0) + dy, -min(fy, 0.0) + dy

    # East face
    interior = ii < nx - 1
    couple(interior, idx + 1, a_e)
    diag[interior] += p_e
    at_b = ~interior
    diag[at_b] += 2 * dx
    rhs[at_b] += (2 * dx - fx) * right[jj[at_b]]

    # West face
    interior = ii > 0
    couple(interior, idx - 1, a_w)
    diag[interior] += p_w
    at_b = ~interior
    diag[at_b] += 2 * dx
    rhs[at_b] += (2 * dx + fx) * left[jj[at_b]]

    # North face
    interior = jj < ny - 1
    couple(interior, idx + nx, a_n)
    diag[interior] += p_n
    at_b = ~interior
    diag[at_b] += 2 * dy
    rhs[at_b] += (2 * dy - fy) * top[ii[at_b]]

    # South face
    interior = jj > 0
    couple(interior, idx - nx, a_s)
    diag[interior] += p_s
    at_b = ~interior
    diag[at_b] += 2 * dy
    rhs[at_b] += (2 * dy + fy) * bottom[ii[at_b]]

    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )

    solution = spsolve(matrix, rhs)
    residual = float(np.linalg.norm(matrix @ solution - rhs))
    tol = 1e-10 * max(float(np.linalg.norm(rhs)), 1e-30)
    if not np.isfinite(solution).all() or residual > tol:
        raise SolverFailure(
            f"direct solve residual {residual:.3e} exceeds tolerance {tol:.3e}",
            params=z,
            residual=residual,
        )
    return Snapshot(values=solution, grid=grid)


class ConvectionDiffusionModel:
    """Forward model wrapping :func:`solve_convdiff` at a fixed grid and config."""

    def __init__(self, grid: GridSpec, config: ConvDiffConfig):
        self.grid = grid
        self.config = config
        self.param_dim = config.param_dim

    @property
    def state_dim(self) -> int:
        return self.grid.n_cells

    @property
    def cost_weight(self) -> float:
        # cell count as the portable cost proxy for budget accounting
        return float(self.grid.n_cells)

    def evaluate(self, z: np.ndarray) -> Snapshot:
        return solve_convdiff(self.config, self.grid, z)


class LinearModel:
    """Linear forward map z -> A z, the analytically tractable test model."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        self.matrix = matrix
        self.param_dim = matrix.shape[1]
        self.grid = GridSpec(nx=matrix.shape[0], ny=1)

    @property
    def state_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def cost_weight(self) -> float:
        return float(self.matrix.shape[0])

    def evaluate(self, z: np.ndarray) -> Snapshot:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != (self.param_dim,):
            raise ValueError(f"expected parameter vector of length {self.param_dim}, got shape {z.shape}")
        return Snapshot(values=self.matrix @ z, grid=self.grid)


def make_fidelity_pair(
    lf_grid: GridSpec, hf_grid: GridSpec, config: ConvDiffConfig
) -> tuple[ConvectionDiffusionModel, ConvectionDiffusionModel]:
    """Coarse/fine solver pair sharing physics, parameterization and BCs."""
    lf = ConvectionDiffusionModel(lf_grid, config)
    hf = ConvectionDiffusionModel(hf_grid, config)
    return lf, hf
