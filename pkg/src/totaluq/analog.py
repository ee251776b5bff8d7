"""
Desk-scale analog of the Freyberg unconfined-aquifer exercise.

A rectangular 20-column by 40-row grid of 250 m cells with a notch of
inactive cells in the north-east corner, a river along the west column
(head-dependent flux), a general-head boundary along part of the south row,
six pumping wells and thirteen observation wells. Stresses vary monthly;
the run starts from the steady state of the first month's stresses.
All numbers are choices for this analog, not survey data.

The storage term ``S_y u du/dt`` carries a factor ``u``, and so do the
sources, so both ``sy`` and the recharge/well rates handed to the solver are
the physical values divided by a reference saturated thickness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pde_solver import FlowProblem, ObsSpec
from .random_field import CovKernel, Grid

__all__ = ["AnalogSpec", "build_analog", "default_prior"]

WELLS = ((6, 8), (12, 13), (8, 20), (14, 24), (5, 29), (12, 33))
WELL_Q = (150.0, 200.0, 150.0, 250.0, 200.0, 150.0)
OBS = (
    (3, 3),
    (9, 4),
    (2, 11),
    (16, 9),
    (9, 16),
    (4, 19),
    (15, 19),
    (11, 25),
    (3, 26),
    (17, 30),
    (8, 32),
    (4, 36),
    (14, 37),
)


@dataclass(frozen=True)
class AnalogSpec:
    nx: int = 20
    ny: int = 40
    cell_size: float = 250.0
    n_steps: int = 25
    step_days: float = 30.0
    specific_yield: float = 0.1
    recharge: float = 1.5e-4  # m/d at the reference thickness
    ref_thickness: float = 32.0
    river_top: float = 33.5
    river_bottom: float = 32.0
    river_conductance: float = 2500.0
    ghb_head: float = 31.0
    ghb_conductance: float = 500.0
    pumping_scale: float = 1.0
    recharge_scale: float = 1.0


def _scale_ij(ij, spec: AnalogSpec):
    i, j = ij
    return min(int(round(i * spec.nx / 20)), spec.nx - 1), min(int(round(j * spec.ny / 40)), spec.ny - 1)


def build_analog(spec: AnalogSpec = AnalogSpec()):
    """Return ``(problem, obs_spec)`` for the analog aquifer."""
    nx, ny = spec.nx, spec.ny
    active = np.ones((ny, nx), bool)
    active[: max(ny // 8, 1), nx - max(nx // 4, 1) :] = False
    grid = Grid(nx, ny, spec.cell_size, spec.cell_size, active.ravel())
    n = spec.n_steps
    month = np.arange(n)
    f0 = spec.recharge / spec.ref_thickness
    recharge = spec.recharge_scale * f0 * (1.0 + 0.5 * np.sin(2 * np.pi * month / 12.0))
    area = grid.cell_area
    wells = []
    for ij, q in zip(WELLS, WELL_Q):
        i, j = _scale_ij(ij, spec)
        rate = -q / (area * spec.ref_thickness) * (1.0 + 0.3 * np.cos(2 * np.pi * month / 12.0))
        wells.append((grid.cell(i, j), spec.pumping_scale * rate))
    river = [grid.cell(0, j) for j in range(ny)]
    stage = np.linspace(spec.river_top, spec.river_bottom, ny)
    ghb = [grid.cell(i, ny - 1) for i in range(nx // 4, 3 * nx // 4)]
    problem = FlowProblem(
        grid=grid,
        sy=spec.specific_yield / spec.ref_thickness,
        times=np.arange(n + 1) * spec.step_days,
        recharge=recharge,
        wells=tuple(wells),
        hdf_cells=np.array(river + ghb),
        hdf_conductance=np.concatenate(
            [np.full(len(river), spec.river_conductance), np.full(len(ghb), spec.ghb_conductance)]
        ),
        hdf_heads=np.concatenate([stage, np.full(len(ghb), spec.ghb_head)]),
    )
    locs = []
    for ij in OBS:
        i, j = _scale_ij(ij, spec)
        c = grid.cell(i, j)
        if grid.active[c] and c not in locs:
            locs.append(c)
    obs = ObsSpec(tuple(locs), tuple(problem.times[1:]))
    return problem, obs


def default_prior(mean_k: float = 5.0, variance: float = 0.25, length_cells: float = 10.0, cell_size: float = 250.0):
    """Exponential-kernel prior for ``y = ln K``: returns ``(mean, kernel)``."""
    return float(np.log(mean_k)), CovKernel(variance, length_cells * cell_size)
