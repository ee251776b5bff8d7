"""
Correlated Gaussian log-conductivity fields on a rectangular grid.

Cells are numbered row-major, ``k = j * nx + i`` with ``i`` the column (x)
and ``j`` the row (y). Fields live on the active cells only, in increasing
cell-number order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, cholesky

__all__ = ["CovKernel", "Grid", "build_covariance", "prior_factor", "sample_fields"]


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid with an active-cell mask."""

    nx: int
    ny: int
    dx: float = 1.0
    dy: float = 1.0
    active: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one row and one column")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("cell sizes must be positive")
        mask = np.ones(self.nx * self.ny, bool) if self.active is None else np.asarray(self.active, bool).ravel()
        if mask.size != self.nx * self.ny:
            raise ValueError(f"active mask has {mask.size} entries, expected {self.nx * self.ny}")
        if not mask.any():
            raise ValueError("grid has no active cells")
        object.__setattr__(self, "active", mask)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def active_cells(self) -> np.ndarray:
        """Global cell numbers of the active cells."""
        return np.flatnonzero(self.active)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def centers(self) -> np.ndarray:
        """(n_active, 2) cell-centre coordinates."""
        k = self.active_cells
        i, j = k % self.nx, k // self.nx
        return np.column_stack([(i + 0.5) * self.dx, (j + 0.5) * self.dy])

    def cell(self, i: int, j: int) -> int:
        return j * self.nx + i

    def active_index(self, cells) -> np.ndarray:
        """Map global cell numbers to positions in active-cell vectors."""
        cells = np.atleast_1d(np.asarray(cells, dtype=int))
        if np.any((cells < 0) | (cells >= self.n_cells)):
            raise ValueError("cell number outside the grid")
        if not np.all(self.active[cells]):
            bad = cells[~self.active[cells]]
            raise ValueError(f"inactive cells referenced: {bad.tolist()}")
        lookup = np.cumsum(self.active) - 1
        return lookup[cells]


@dataclass(frozen=True)
class CovKernel:
    """Isotropic exponential covariance ``variance * exp(-d / length)``."""

    variance: float
    length: float
    family: str = "exponential"

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be >= 0")
        if not self.length > 0:
            raise ValueError("correlation length must be > 0")
        if self.family != "exponential":
            raise ValueError(f"unsupported kernel family {self.family!r}")

    def __call__(self, d):
        return self.variance * np.exp(-np.asarray(d, dtype=float) / self.length)


def build_covariance(grid: Grid, kernel: CovKernel) -> np.ndarray:
    """Covariance matrix of the field over active cells (Euclidean centre distances)."""
    if grid.n_active < 2:
        raise ValueError("need at least two active cells")
    xy = grid.centers()
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    return kernel(d)


def prior_factor(grid: Grid, kernel: CovKernel) -> np.ndarray:
    """Lower Cholesky factor of the prior covariance (with jitter fallback)."""
    return cholesky(build_covariance(grid, kernel))


def sample_fields(
    grid: Grid,
    kernel: CovKernel,
    mean,
    n: int,
    rng: RngStream,
    factor: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``n`` fields ``mean + L z``.

    Member ``k`` uses stream ``rng.child(k)``, so the ensemble does not depend
    on how many members are drawn together.

    Returns
    -------
    (n, n_active) ndarray
    """
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (grid.n_active,))
    if kernel.variance == 0.0:
        return np.tile(mean, (n, 1))
    L = prior_factor(grid, kernel) if factor is None else factor
    z = np.stack([rng.child(k).generator().standard_normal(grid.n_active) for k in range(n)]) if n else np.zeros((0, grid.n_active))
    return mean + z @ L.T
