"""
Finite-volume solver for nonlinear unconfined flow,

    S_y u du/dt = div(K u grad u) + u (f(t) + g(x, t)),

with ``u`` the saturated thickness (head above a flat aquifer base),
``K = exp(y)`` the hydraulic conductivity, ``f`` a spatially uniform
recharge rate and ``g`` the well/source term (both per unit time, multiplied
by ``u`` as written above).

Time stepping is implicit Euler; each step is linearized by Picard iteration
with the intercell transmissivity ``K_face * u_face`` lagged at the previous
iterate. ``K_face`` is the harmonic mean of the two cell conductivities.
``u_face`` is the arithmetic mean of the cell heads by default, which makes
the face flux ``K_face (u_a^2 - u_b^2) / (2 d)`` and reproduces the Dupuit
profile exactly; ``weighting="upstream"`` uses the head of the upgradient
cell instead (first order). Each Picard linear system is symmetric positive
definite and is solved with a banded Cholesky factorization.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .random_field import Grid

__all__ = [
    "DewateringError",
    "FlowProblem",
    "ObsSpec",
    "PicardError",
    "SolveInfo",
    "observe",
    "scenario",
    "solve",
    "solve_steady",
]


class PicardError(RuntimeError):
    """Picard iteration did not reach the residual tolerance."""

    def __init__(self, step: int, residual: float):
        super().__init__(f"Picard iteration failed at step {step}: relative residual {residual:.3e}")
        self.step = step
        self.residual = residual


class DewateringError(RuntimeError):
    """Head fell to the dry-cell floor."""

    def __init__(self, step: int, cell: int, head: float):
        super().__init__(f"cell {cell} dewatered at step {step} (u = {head:.3e})")
        self.step = step
        self.cell = cell
        self.head = head


@dataclass(frozen=True)
class FlowProblem:
    """Everything but the conductivity field.

    Parameters
    ----------
    grid : Grid
    sy : float
        Specific yield.
    times : (n_steps + 1,) array
        Strictly increasing; ``times[0]`` is the initial time.
    recharge : (n_steps,) array
        ``f`` for each step.
    wells : tuple of (cell, rates)
        Global cell number and per-step ``g`` contribution (negative for
        pumping).
    fixed_cells, fixed_heads : arrays
        Dirichlet cells (global numbers) and their heads.
    hdf_cells, hdf_conductance, hdf_heads : arrays
        Head-dependent flux cells (river reaches, general-head boundaries):
        inflow ``C (h_ext - u)``.
    u0 : (n_active,) array or None
        Initial heads. ``None`` runs a steady-state warmup under the
        stresses of step ``warmup_step`` and starts from it.
    source : (n_steps, n_active) array or None
        Additional spatially distributed ``g``.
    """

    grid: Grid
    sy: float
    times: np.ndarray
    recharge: np.ndarray
    wells: tuple = ()
    fixed_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    fixed_heads: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hdf_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    hdf_conductance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hdf_heads: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u0: np.ndarray | None = None
    warmup_step: int = 0
    source: np.ndarray | None = None
    weighting: str = "central"
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    dry_floor: float = 1e-3

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing with at least one step")
        n = times.size - 1
        rech = np.broadcast_to(np.asarray(self.recharge, dtype=float), (n,)).copy()
        object.__setattr__(self, "recharge", rech)
        if not self.sy > 0:
            raise ValueError("specific yield must be > 0")
        wells = []
        for cell, rates in self.wells:
            rates = np.broadcast_to(np.asarray(rates, dtype=float), (n,)).copy()
            self.grid.active_index(cell)
            wells.append((int(cell), rates))
        object.__setattr__(self, "wells", tuple(wells))
        for name, dtype in [
            ("fixed_cells", int),
            ("fixed_heads", float),
            ("hdf_cells", int),
            ("hdf_conductance", float),
            ("hdf_heads", float),
        ]:
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=dtype)))
        if self.fixed_cells.size != self.fixed_heads.size:
            raise ValueError("fixed_cells and fixed_heads differ in length")
        if not np.all(np.isfinite(self.fixed_heads)):
            raise ValueError("fixed heads must be finite")
        if not (self.hdf_cells.size == self.hdf_conductance.size == self.hdf_heads.size):
            raise ValueError("head-dependent boundary arrays differ in length")
        if self.fixed_cells.size:
            self.grid.active_index(self.fixed_cells)
        if self.hdf_cells.size:
            self.grid.active_index(self.hdf_cells)
        if self.u0 is not None:
            u0 = np.asarray(self.u0, dtype=float)
            if u0.shape != (self.grid.n_active,):
                raise ValueError("u0 must have one value per active cell")
            object.__setattr__(self, "u0", u0)
        if self.source is not None:
            src = np.asarray(self.source, dtype=float)
            if src.shape != (n, self.grid.n_active):
                raise ValueError(f"source must have shape {(n, self.grid.n_active)}")
            object.__setattr__(self, "source", src)
        if self.weighting not in ("central", "upstream"):
            raise ValueError(f"unknown weighting {self.weighting!r}")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


@dataclass
class SolveInfo:
    picard_iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    mass_balance: list = field(default_factory=list)


class _Assembly:
    """Static connectivity of a problem, reused across Picard iterations."""

    def __init__(self, problem: FlowProblem, y):
        g = problem.grid
        self.n = g.n_active
        self.area = g.cell_area
        k = np.exp(np.asarray(y, dtype=float))
        if k.shape != (self.n,):
            raise ValueError(f"y must have {self.n} entries, got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise ValueError("non-finite conductivity")
        active = g.active.reshape(g.ny, g.nx)
        idx = np.full(g.nx * g.ny, -1)
        idx[g.active_cells] = np.arange(self.n)
        idx = idx.reshape(g.ny, g.nx)
        pairs, factors = [], []
        h = active[:, :-1] & active[:, 1:]
        pairs.append(np.column_stack([idx[:, :-1][h], idx[:, 1:][h]]))
        factors.append(np.full(h.sum(), g.dy / g.dx))
        v = active[:-1, :] & active[1:, :]
        pairs.append(np.column_stack([idx[:-1, :][v], idx[1:, :][v]]))
        factors.append(np.full(v.sum(), g.dx / g.dy))
        self.a, self.b = np.concatenate(pairs).T
        kf = 2.0 * k[self.a] * k[self.b] / (k[self.a] + k[self.b])
        self.kgeo = kf * np.concatenate(factors)
        self.bw = int(np.max(np.abs(self.b - self.a))) if self.a.size else 0
        self.fixed = np.zeros(self.n, bool)
        self.fixed_pos = g.active_index(problem.fixed_cells) if problem.fixed_cells.size else np.zeros(0, int)
        self.fixed[self.fixed_pos] = True
        self.hdf_pos = g.active_index(problem.hdf_cells) if problem.hdf_cells.size else np.zeros(0, int)
        self.hdf_c = problem.hdf_conductance
        self.hdf_h = problem.hdf_heads
        self.weighting = problem.weighting
        self.problem = problem
        self.well_pos = [int(g.active_index(c)[0]) for c, _ in problem.wells]

    def g_field(self, step: int) -> np.ndarray:
        p = self.problem
        gf = np.full(self.n, p.recharge[step])
        for pos, (_, rates) in zip(self.well_pos, p.wells):
            gf[pos] += rates[step]
        if p.source is not None:
            gf = gf + p.source[step]
        return gf

    def face_t(self, u: np.ndarray) -> np.ndarray:
        ua, ub = u[self.a], u[self.b]
        if self.weighting == "central":
            uf = 0.5 * (ua + ub)
        else:
            uf = np.where(ua >= ub, ua, ub)
        return self.kgeo * uf

    def residual(self, u, u_old, dt, gf):
        """Cell imbalances (storage - inflow) and the scale of the terms."""
        t = self.face_t(u)
        q = t * (u[self.b] - u[self.a])  # flow from b into a
        inflow = np.zeros(self.n)
        np.add.at(inflow, self.a, q)
        np.add.at(inflow, self.b, -q)
        bnd = np.zeros(self.n)
        np.add.at(bnd, self.hdf_pos, self.hdf_c * (self.hdf_h - u[self.hdf_pos]))
        src = self.area * u * gf
        cap = np.zeros(self.n) if dt is None else self.area * self.problem.sy * u / dt
        stor = cap * (u - u_old) if dt is not None else cap
        absflux = np.zeros(self.n)
        np.add.at(absflux, self.a, np.abs(q))
        np.add.at(absflux, self.b, np.abs(q))
        # operator magnitude: what roundoff in r is measured against
        tu = t * (np.abs(u[self.a]) + np.abs(u[self.b]))
        op = cap * np.abs(u) + np.abs(bnd) + np.abs(src)
        np.add.at(op, self.a, tu)
        np.add.at(op, self.b, tu)
        r = stor - inflow - bnd - src
        scale = np.abs(stor) + absflux + np.abs(bnd) + np.abs(src)
        r[self.fixed] = 0.0
        scale[self.fixed] = 0.0
        op[self.fixed] = 0.0
        return r, scale, op

    def solve_linear(self, uk, u_old, dt, gf):
        n, bw = self.n, self.bw
        t = self.face_t(uk)
        diag = np.zeros(n)
        rhs = self.area * uk * gf
        if dt is not None:
            s = self.area * self.problem.sy * uk / dt
            diag += s
            rhs = rhs + s * u_old
        np.add.at(diag, self.hdf_pos, self.hdf_c)
        np.add.at(rhs, self.hdf_pos, self.hdf_c * self.hdf_h)
        fa, fb = self.fixed[self.a], self.fixed[self.b]
        # couplings between two free cells stay in the matrix
        np.add.at(diag, self.a, t)
        np.add.at(diag, self.b, t)
        # a free cell next to a Dirichlet cell sees it on the right-hand side
        m = fb & ~fa
        np.add.at(rhs, self.a[m], t[m] * uk[self.b[m]])
        m = fa & ~fb
        np.add.at(rhs, self.b[m], t[m] * uk[self.a[m]])
        diag[self.fixed] = 1.0
        rhs[self.fixed] = uk[self.fixed]
        ab = np.zeros((bw + 1, n))
        ab[bw] = diag
        free = ~(fa | fb)
        lo = np.minimum(self.a, self.b)[free]
        hi = np.maximum(self.a, self.b)[free]
        np.add.at(ab, (bw + lo - hi, hi), -t[free])
        return solveh_banded(ab, rhs, lower=False, check_finite=False)


ROUNDOFF = 64 * np.finfo(float).eps


def _picard(asm: _Assembly, u_start, u_old, dt, gf, step, tol, max_iter):
    u = u_start.copy()
    for it in range(1, max_iter + 1):
        u = asm.solve_linear(u, u_old, dt, gf)
        _check_dry(u, asm.problem.dry_floor, step)
        r, scale, op = asm.residual(u, u_old, dt, gf)
        rmax = np.max(np.abs(r))
        rel = float(rmax / max(np.max(scale), 1e-300))
        if rel <= tol or rmax <= ROUNDOFF * np.max(op):
            return u, it, rel
    raise PicardError(step, rel)


def _mass_balance(asm: _Assembly, u, u_old, dt, gf) -> float:
    free = ~asm.fixed
    t = asm.face_t(u)
    q = t * (u[asm.b] - u[asm.a])
    # only faces touching a Dirichlet cell carry boundary flow into the free cells
    from_fixed = np.concatenate([q[asm.fixed[asm.b] & free[asm.a]], -q[asm.fixed[asm.a] & free[asm.b]]])
    hdf = asm.hdf_c * (asm.hdf_h - u[asm.hdf_pos])
    hdf = hdf[free[asm.hdf_pos]]
    src = (asm.area * u * gf)[free]
    stor = 0.0 if dt is None else np.sum((asm.area * asm.problem.sy * u * (u - u_old) / dt)[free])
    terms = np.concatenate([from_fixed, hdf, src, [-stor]])
    total_in = np.sum(terms[terms > 0])
    total_out = -np.sum(terms[terms < 0])
    _, _, op = asm.residual(u, u_old, dt, gf)
    # flows at roundoff level of the operator (an equilibrium) count as balanced
    denom = 0.5 * (total_in + total_out)
    if denom <= np.sqrt(np.finfo(float).eps) * np.max(op):
        return 0.0
    return float(abs(total_in - total_out) / denom)


def _check_dry(u, floor, step):
    k = int(np.argmin(u))
    if u[k] <= floor:
        raise DewateringError(step, k, float(u[k]))


def solve_steady(problem: FlowProblem, y, step: int | None = None, u_guess=None, info: SolveInfo | None = None):
    """Steady heads under the stresses of ``step`` (default ``warmup_step``)."""
    asm = _Assembly(problem, y)
    if not (asm.fixed.any() or asm.hdf_pos.size):
        raise ValueError("steady problem needs a fixed-head or head-dependent boundary")
    step = problem.warmup_step if step is None else step
    gf = asm.g_field(step)
    if u_guess is None:
        ref = np.concatenate([problem.fixed_heads, problem.hdf_heads])
        u_guess = np.full(asm.n, float(np.mean(ref)))
    u = np.asarray(u_guess, dtype=float).copy()
    if asm.fixed.any():
        u[asm.fixed_pos] = problem.fixed_heads
    u, it, rel = _picard(asm, u, None, None, gf, -1, problem.picard_tol, max(problem.picard_max_iter, 200))
    _check_dry(u, problem.dry_floor, -1)
    if info is not None:
        info.picard_iterations.append(it)
        info.residuals.append(rel)
        info.mass_balance.append(_mass_balance(asm, u, None, None, gf))
    return u


def solve(problem: FlowProblem, y, return_info: bool = False):
    """Transient heads for conductivity ``exp(y)``.

    Returns
    -------
    u : (n_steps, n_active) ndarray
        Heads at ``times[1:]``.
    info : SolveInfo
        Only with ``return_info``; per-step Picard iterations, residuals and
        relative mass-balance errors (the warmup, when run, is entry 0).

    Raises
    ------
    PicardError, DewateringError
    """
    asm = _Assembly(problem, y)
    info = SolveInfo()
    if problem.u0 is None:
        u = solve_steady(problem, y, info=info)
    else:
        u = problem.u0.copy()
        if asm.fixed.any():
            u[asm.fixed_pos] = problem.fixed_heads
    out = np.empty((problem.n_steps, asm.n))
    dts = np.diff(problem.times)
    for n in range(problem.n_steps):
        gf = asm.g_field(n)
        u_new, it, rel = _picard(asm, u, u, dts[n], gf, n, problem.picard_tol, problem.picard_max_iter)
        _check_dry(u_new, problem.dry_floor, n)
        info.picard_iterations.append(it)
        info.residuals.append(rel)
        info.mass_balance.append(_mass_balance(asm, u_new, u, dts[n], gf))
        out[n] = u = u_new
    return (out, info) if return_info else out


@dataclass(frozen=True)
class ObsSpec:
    """Observation points: every listed location at every listed time.

    ``locations`` are global cell numbers; ``times`` are matched to the
    nearest output time ``times[1:]`` of the problem.
    """

    locations: tuple
    times: tuple

    def points(self, problem: FlowProblem):
        """(active position, step) arrays ordered location-major, time-minor."""
        pos = problem.grid.active_index(list(self.locations))
        out_t = problem.times[1:]
        dts = np.diff(problem.times)
        lo, hi = out_t[0] - 0.5 * dts[0], out_t[-1] + 0.5 * dts[-1]
        steps = []
        for t in self.times:
            if not lo <= t <= hi:
                raise ValueError(f"observation time {t} outside the simulated range [{lo}, {hi}]")
            steps.append(int(np.argmin(np.abs(out_t - t))))
        steps = np.asarray(steps, dtype=int)
        return np.repeat(pos, steps.size), np.tile(steps, pos.size)

    def flat_index(self, problem: FlowProblem) -> np.ndarray:
        """Indices into ``u.ravel()`` for a (n_steps, n_active) head array."""
        pos, steps = self.points(problem)
        return steps * problem.grid.n_active + pos

    def __len__(self) -> int:
        return len(self.locations) * len(self.times)


def observe(u: np.ndarray, obs: ObsSpec, problem: FlowProblem) -> np.ndarray:
    """Heads at the observation points, location-major."""
    u = np.asarray(u)
    return u.ravel()[obs.flat_index(problem)]


def scenario(problem: FlowProblem, pumping_scale: float, recharge_scale: float) -> FlowProblem:
    """Copy of ``problem`` with well rates and recharge scaled."""
    if pumping_scale < 0 or recharge_scale < 0:
        raise ValueError("scales must be >= 0")
    wells = tuple((c, r * pumping_scale) for c, r in problem.wells)
    return dataclasses.replace(problem, wells=wells, recharge=problem.recharge * recharge_scale)
