"""Tests for the unconfined-flow finite-volume solver.

Manufactured sources are derived symbolically with sympy. Two constructions
isolate the discretization errors:

* space: ``u`` linear in time, so implicit Euler differences the storage
  term exactly and only the spatial error remains;
* time: ``u**2 / 2`` quadratic in x on a strip with constant ``K``, so the
  two-point face fluxes and their divergence are exact and only the time
  error remains (the missing boundary-face flux is fed in as a source in
  the two end cells).
"""

import dataclasses

import numpy as np
import pytest
import sympy as sp

from totaluq.analog import AnalogSpec, build_analog, default_prior
from totaluq.numerics import RngStream
from totaluq.pde_solver import (
    DewateringError,
    FlowProblem,
    ObsSpec,
    PicardError,
    observe,
    scenario,
    solve,
    solve_steady,
)
from totaluq.random_field import Grid, sample_fields


def strip(n, length=1.0):
    return Grid(n, 1, length / n, 1.0)


def test_equilibrium_invariance():
    grid = Grid(6, 4, 10.0, 10.0)
    p = FlowProblem(grid, 0.2, np.linspace(0, 50, 6), 0.0, u0=np.full(24, 7.5))
    y = np.random.default_rng(0).normal(size=24)
    u, info = solve(p, y, return_info=True)
    np.testing.assert_allclose(u, 7.5, rtol=0, atol=1e-12)
    assert max(info.mass_balance) <= 1e-8


def test_dupuit_steady_profile():
    n = 200
    grid = strip(n, length=float(n))
    uL, uR = 12.0, 4.0
    p = FlowProblem(grid, 0.1, [0.0, 1.0], 0.0, fixed_cells=[0, n - 1], fixed_heads=[uL, uR])
    u = solve_steady(p, np.full(n, np.log(3.0)))
    x = np.arange(n, dtype=float)
    L = x[-1]
    exact = np.sqrt(uL**2 + (uR**2 - uL**2) * x / L)
    assert np.max(np.abs(u - exact)) <= 1e-3 * (uL - uR)


def test_dupuit_reached_by_time_stepping():
    n = 50
    grid = strip(n, length=float(n))
    p = FlowProblem(
        grid, 0.05, np.linspace(0, 4000, 41), 0.0, fixed_cells=[0, n - 1], fixed_heads=[6.0, 3.0], u0=np.full(n, 4.5)
    )
    u, info = solve(p, np.zeros(n), return_info=True)
    x = np.arange(n, dtype=float)
    exact = np.sqrt(36 + (9 - 36) * x / x[-1])
    assert np.max(np.abs(u[-1] - exact)) < 1e-3
    assert max(info.mass_balance) <= 1e-8


def _mms_space_error(n):
    x, y, t = sp.symbols("x y t")
    sy = 0.5
    u = 3 + (1 + t / 2) * sp.cos(sp.pi * x) * sp.cos(sp.pi * y) / 2
    lnk = sp.Rational(3, 10) * sp.sin(sp.pi * x) * sp.cos(sp.pi * y)
    k = sp.exp(lnk)
    flux_div = sp.diff(k * u * sp.diff(u, x), x) + sp.diff(k * u * sp.diff(u, y), y)
    g = (sy * u * sp.diff(u, t) - flux_div) / u
    g_f = sp.lambdify((x, y, t), g, "numpy")
    u_f = sp.lambdify((x, y, t), u, "numpy")
    lnk_f = sp.lambdify((x, y), lnk, "numpy")
    grid = Grid(n, n, 1.0 / n, 1.0 / n)
    xc, yc = grid.centers().T
    times = np.array([0.0, 0.5, 1.0])
    src = np.stack([g_f(xc, yc, tt) for tt in times[1:]])
    p = FlowProblem(grid, sy, times, 0.0, u0=u_f(xc, yc, 0.0), source=src)
    out, info = solve(p, lnk_f(xc, yc), return_info=True)
    assert max(info.mass_balance) <= 1e-8
    return np.max(np.abs(out[-1] - u_f(xc, yc, 1.0)))


def test_manufactured_space_order():
    errs = [_mms_space_error(n) for n in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), (errs, orders)


def _mms_time_error(n_steps, n_cells=10):
    x, t = sp.symbols("x t")
    sy, kc = 0.3, 2.0
    w = (sp.Rational(9, 2) + x - x**2 / 2) * sp.exp(t / 2)
    u = sp.sqrt(2 * w)
    wx = sp.diff(w, x)
    g = (sy * u * sp.diff(u, t) - sp.diff(kc * wx, x)) / u
    g_f = sp.lambdify((x, t), g, "numpy")
    u_f = sp.lambdify((x, t), u, "numpy")
    wx_f = sp.lambdify((x, t), wx, "numpy")
    grid = strip(n_cells)
    dx = grid.dx
    xc = grid.centers()[:, 0]
    times = np.linspace(0.0, 1.0, n_steps + 1)
    src = np.stack([g_f(xc, tt) for tt in times[1:]])
    for s, tt in enumerate(times[1:]):
        # boundary faces are no-flow in the grid; add their exact flux as a source
        src[s, 0] += -kc * wx_f(0.0, tt) / dx / u_f(xc[0], tt)
        src[s, -1] += kc * wx_f(1.0, tt) / dx / u_f(xc[-1], tt)
    p = FlowProblem(grid, sy, times, 0.0, u0=u_f(xc, 0.0), source=src)
    out = solve(p, np.full(n_cells, np.log(kc)))
    return np.max(np.abs(out[-1] - u_f(xc, 1.0)))


def test_manufactured_time_order():
    errs = [_mms_time_error(m) for m in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9), (errs, orders)


def test_time_mms_spatially_exact():
    # with a tiny step the remaining error must be tiny, so space is exact
    assert _mms_time_error(2000) < 1e-4


@pytest.fixture(scope="module")
def analog():
    problem, obs = build_analog()
    mean, kernel = default_prior()
    ys = sample_fields(problem.grid, kernel, mean, 3, RngStream(11))
    return problem, obs, ys


def test_analog_mass_balance_every_step(analog):
    problem, _, ys = analog
    for y in ys:
        u, info = solve(problem, y, return_info=True)
        assert np.all(u > 0)
        assert max(info.mass_balance) <= 1e-8
        assert max(info.picard_iterations[1:]) <= problem.picard_max_iter


def test_solve_deterministic(analog):
    problem, _, ys = analog
    a = solve(problem, ys[0])
    b = solve(problem, ys[0])
    assert a.tobytes() == b.tobytes()


def test_monotone_in_recharge():
    grid = Grid(5, 4, 100.0, 100.0)
    base = FlowProblem(
        grid,
        0.003,
        np.arange(6) * 30.0,
        np.full(5, 2e-6),
        wells=((grid.cell(2, 2), -3e-6),),
        hdf_cells=[grid.cell(0, j) for j in range(4)],
        hdf_conductance=np.full(4, 500.0),
        hdf_heads=np.full(4, 20.0),
    )
    y = np.random.default_rng(3).normal(0.5, 0.4, grid.n_active)
    prev = solve(base, y)
    for scale in (1.2, 1.5, 2.0):
        cur = solve(scenario(base, 1.0, scale), y)
        assert np.all(cur >= prev - 1e-10)
        prev = cur


def test_observe_single_point(analog):
    problem, _, ys = analog
    u = solve(problem, ys[0])
    c = problem.grid.active_cells[17]
    spec = ObsSpec((c,), (problem.times[4],))
    np.testing.assert_array_equal(observe(u, spec, problem), [u[3, 17]])


def test_observe_paper_layout(analog):
    problem, obs, ys = analog
    u = solve(problem, ys[0])
    d = observe(u, obs, problem)
    assert d.shape == (325,)
    pos = problem.grid.active_index(obs.locations[1])[0]
    np.testing.assert_array_equal(d[25:50], u[:, pos])


def test_observe_duplicates_and_nearest_time(analog):
    problem, _, ys = analog
    u = solve(problem, ys[0])
    c = problem.grid.active_cells[5]
    spec = ObsSpec((c, c), (problem.times[2] + 3.0,))
    np.testing.assert_array_equal(observe(u, spec, problem), [u[1, 5], u[1, 5]])


def test_observe_rejections(analog):
    problem, _, ys = analog
    u = solve(problem, ys[0])
    inactive = int(np.flatnonzero(~problem.grid.active)[0])
    with pytest.raises(ValueError, match="inactive"):
        observe(u, ObsSpec((inactive,), (problem.times[1],)), problem)
    with pytest.raises(ValueError, match="outside"):
        observe(u, ObsSpec((0,), (problem.times[-1] + 1e4,)), problem)


def test_scenario_scaling(analog):
    problem, _, _ = analog
    same = scenario(problem, 1.0, 1.0)
    np.testing.assert_array_equal(same.recharge, problem.recharge)
    for (c1, r1), (c2, r2) in zip(same.wells, problem.wells):
        assert c1 == c2
        np.testing.assert_array_equal(r1, r2)
    fc = scenario(problem, 1.5, 0.6)
    np.testing.assert_allclose(fc.recharge, 0.6 * problem.recharge)
    np.testing.assert_allclose(fc.wells[0][1], 1.5 * problem.wells[0][1])
    np.testing.assert_array_equal(fc.hdf_heads, problem.hdf_heads)
    off = scenario(problem, 0.0, 0.0)
    assert not off.recharge.any()
    assert all(not r.any() for _, r in off.wells)
    with pytest.raises(ValueError):
        scenario(problem, -1.0, 1.0)


def test_picard_failure_reported():
    n = 20
    grid = strip(n, float(n))
    p = FlowProblem(grid, 0.1, [0.0, 1.0], 0.0, fixed_cells=[0, n - 1], fixed_heads=[10.0, 1.0], u0=np.full(n, 5.0), picard_max_iter=1)
    with pytest.raises(PicardError) as info:
        solve(p, np.zeros(n))
    assert info.value.step == 0


def test_dewatering_reported():
    grid = Grid(3, 1, 1.0, 1.0)
    p = FlowProblem(grid, 1.0, [0.0, 1.0, 2.0], 0.0, wells=((1, -5.0),), u0=np.full(3, 1.0), picard_max_iter=200)
    with pytest.raises(DewateringError):
        solve(p, np.zeros(3))


def test_problem_validation():
    grid = Grid(3, 1)
    with pytest.raises(ValueError):
        FlowProblem(grid, 0.0, [0, 1], 0.0)
    with pytest.raises(ValueError):
        FlowProblem(grid, 0.1, [0, 0], 0.0)
    mask = np.array([True, False, True])
    g2 = Grid(3, 1, active=mask)
    with pytest.raises(ValueError, match="inactive"):
        FlowProblem(g2, 0.1, [0, 1], 0.0, wells=((1, -1.0),))


def test_analog_forecast_scenario_runs(analog):
    problem, _, ys = analog
    fc = scenario(problem, 1.5, 0.6)
    u = solve(fc, ys[0])
    base = solve(problem, ys[0])
    assert np.all(np.isfinite(u))
    assert np.mean(u) < np.mean(base)


def test_analog_spec_rescales_locations():
    small = AnalogSpec(nx=10, ny=20, cell_size=500.0)
    problem, obs = build_analog(small)
    assert problem.grid.n_cells == 200
    assert len(obs.locations) >= 10
    u = solve(problem, np.full(problem.grid.n_active, np.log(5.0)))
    assert u.shape == (25, problem.grid.n_active)
    assert dataclasses.is_dataclass(problem)
