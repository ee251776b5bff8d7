import numpy as np
import pytest

from totaluq.ies import ForwardError, IESConfig, flow_forward, ies_update, mean_misfit, run_ies
from totaluq.inversion import Observations
from totaluq.numerics import RngStream
from totaluq.pde_solver import FlowProblem, PicardError
from totaluq.random_field import Grid


def hand_kalman(y, d, d_obs, eps, var):
    # textbook ensemble-smoother update, written out independently
    n = y.shape[0]
    my, md = y.mean(0), d.mean(0)
    cyd = sum(np.outer(y[j] - my, d[j] - md) for j in range(n)) / (n - 1)
    cdd = sum(np.outer(d[j] - md, d[j] - md) for j in range(n)) / (n - 1)
    gain = cyd @ np.linalg.inv(cdd + var * np.eye(d.shape[1]))
    return np.array([y[j] + gain @ (d_obs + eps[j] - d[j]) for j in range(n)])


def test_update_matches_kalman_2x2():
    rng = np.random.default_rng(0)
    G = np.array([[1.0, 0.5], [-0.3, 2.0]])
    y = rng.standard_normal((6, 2))
    d = y @ G.T
    d_obs = np.array([0.7, -1.2])
    eps = rng.normal(0, 0.1, (6, 2))
    out = ies_update(y, d, d_obs, eps, 0.01, 0.0)
    np.testing.assert_allclose(out, hand_kalman(y, d, d_obs, eps, 0.01), atol=1e-8)


def test_run_one_iteration_equals_kalman():
    G = np.array([[1.0, 0.5], [-0.3, 2.0]])
    y0 = np.random.default_rng(1).standard_normal((8, 2))
    obs = Observations([0, 1], [3.0, 4.0])
    cfg = IESConfig(n_iterations=1, budget=16, lambda0=0.0)
    res = run_ies(lambda y: G @ y, y0, obs, 0.01, cfg, RngStream(1))
    assert res.accepted == [True]
    expect = hand_kalman(y0, y0 @ G.T, obs.u_values, res.perturbations, 0.01)
    np.testing.assert_allclose(res.ensemble, expect, atol=1e-8)


def test_damping_limit_freezes():
    rng = np.random.default_rng(2)
    y = rng.standard_normal((5, 3))
    d = y @ rng.standard_normal((3, 4))
    steps = [np.linalg.norm(ies_update(y, d, np.ones(4), np.zeros((5, 4)), 0.1, lam) - y) for lam in (0.0, 1e3, 1e12)]
    assert steps[0] > steps[1] > steps[2]
    assert steps[2] < 1e-7


def test_zero_observations_returns_prior():
    y0 = np.arange(12.0).reshape(4, 3)
    res = run_ies(lambda y: y, y0, Observations(), 0.1, IESConfig(1, 8), RngStream(0))
    np.testing.assert_array_equal(res.ensemble, y0)
    assert res.n_calls == 0


def test_budget_split_and_accounting():
    cfg = IESConfig(n_iterations=3, budget=103)
    assert cfg.size == 25
    with pytest.raises(ValueError):
        IESConfig(n_iterations=3, budget=100, ensemble_size=30)
    G = np.random.default_rng(3).standard_normal((6, 4))
    obs = Observations(np.arange(6), G @ np.ones(4))
    calls = []

    def fwd(y):
        calls.append(1)
        return G @ y

    res = run_ies(fwd, lambda s: s.generator().standard_normal(4), obs, 0.05, cfg, RngStream(3))
    rejected = len(res.accepted) - res.n_accepted
    assert res.n_calls == len(calls) == 25 * (res.n_accepted + 1) + 25 * rejected
    assert res.n_calls <= cfg.budget
    assert all(b <= a for a, b in zip(res.misfits, res.misfits[1:]))


def test_nonlinear_misfit_decreases():
    obs = Observations(np.arange(3), [0.5, 1.0, -0.2])

    def fwd(y):
        return np.array([np.tanh(y[0] + y[1]), y[1] ** 2, y[0] * y[2]])

    cfg = IESConfig(n_iterations=3, budget=400)
    res = run_ies(fwd, lambda s: s.generator().standard_normal(3), obs, 0.01, cfg, RngStream(4))
    assert res.n_accepted >= 1
    assert res.misfits[-1] < res.misfits[0]
    assert np.all(np.diff(res.misfits) <= 0)


def test_failed_member_resampled_once():
    tries = {"n": 0}

    def flaky(y):
        tries["n"] += 1
        if tries["n"] == 2:
            raise PicardError(0, 1.0)
        return y.copy()

    y_draw = lambda s: s.generator().standard_normal(2)  # noqa: E731
    res = run_ies(flaky, y_draw, Observations([0, 1], [1.0, 1.0]), 0.1, IESConfig(1, 12, ensemble_size=4), RngStream(5))
    assert res.n_calls >= 5

    def broken(y):
        raise PicardError(0, 1.0)

    with pytest.raises(ForwardError) as info:
        run_ies(broken, y_draw, Observations([0], [1.0]), 0.1, IESConfig(1, 12, ensemble_size=4), RngStream(5))
    assert info.value.member == 0


def test_flow_forward_on_small_aquifer():
    grid = Grid(4, 3, 50.0, 50.0)
    problem = FlowProblem(
        grid,
        0.003,
        np.arange(4) * 10.0,
        1e-6,
        hdf_cells=[0, 4, 8],
        hdf_conductance=np.full(3, 100.0),
        hdf_heads=np.full(3, 10.0),
    )
    obs = Observations([3, 15, 23], [10.0, 10.0, 10.0])
    f = flow_forward(problem, obs)
    d = f(np.zeros(12))
    assert d.shape == (3,)
    assert mean_misfit(d[None], obs.u_values, 1.0) >= 0
