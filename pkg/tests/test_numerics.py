import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from totaluq.numerics import (
    NotPositiveDefiniteError,
    OptimizationError,
    OptimizerConfig,
    RngStream,
    SymmetryError,
    UnsupportedPrimitiveError,
    cholesky,
    gradient,
    minimize,
    sample_std_normal,
    sym_eig,
)
from totaluq.numerics import autodiff as ad


def central_fd(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# --- sym_eig -----------------------------------------------------------


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_eig_diagonal(method):
    vals, vecs = sym_eig(np.array([[2.0, 0.0], [0.0, 1.0]]), method=method)
    np.testing.assert_allclose(vals, [2.0, 1.0])
    np.testing.assert_allclose(vecs, np.eye(2), atol=1e-14)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_eig_swap_matrix(method):
    vals, vecs = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]), method=method)
    np.testing.assert_allclose(vals, [1.0, -1.0], atol=1e-14)
    s = 1 / np.sqrt(2)
    # sign rule: largest-magnitude entry positive, first index on ties
    np.testing.assert_allclose(vecs[:, 0], [s, s], atol=1e-14)
    np.testing.assert_allclose(vecs[:, 1], [s, -s], atol=1e-14)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_eig_random_20_reconstruction(method):
    rng = np.random.default_rng(0)
    b = rng.standard_normal((20, 20))
    a = b + b.T
    vals, vecs = sym_eig(a, method=method)
    assert np.all(np.diff(vals) <= 0)
    rec = vecs @ np.diag(vals) @ vecs.T
    assert np.linalg.norm(rec - a) / np.linalg.norm(a) <= 1e-10
    for i in range(20):
        res = np.linalg.norm(a @ vecs[:, i] - vals[i] * vecs[:, i])
        assert res <= 1e-8 * np.linalg.norm(a, 2)
        assert vecs[np.argmax(np.abs(vecs[:, i])), i] > 0


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 200), seed=st.integers(0, 2**31))
def test_eig_reconstruction_property(n, seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, n))
    a = 0.5 * (b + b.T)
    vals, vecs = sym_eig(a)
    rec = (vecs * vals) @ vecs.T
    assert np.linalg.norm(rec - a) / np.linalg.norm(a) <= 1e-10


def test_eig_rejects_asymmetric():
    with pytest.raises(SymmetryError, match="not symmetric"):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(3)
    b = rng.standard_normal((30, 30))
    a = b @ b.T
    v1, e1 = sym_eig(a, "lapack")
    v2, e2 = sym_eig(a, "jacobi")
    np.testing.assert_allclose(v1, v2, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(np.abs(e1.T @ e2), np.eye(30), atol=1e-7)


# --- cholesky ----------------------------------------------------------


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(5)), np.eye(5))


def test_cholesky_hand_case():
    L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)


def test_cholesky_singular_gets_jitter():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    L = cholesky(a)
    assert np.linalg.norm(L @ L.T - a) / np.linalg.norm(a) < 1e-8
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky(a, jitter=False)
    assert info.value.pivot == 1


def test_cholesky_indefinite_fails_with_pivot():
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))
    assert info.value.pivot == 1


def test_cholesky_random_spd():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((40, 40))
    a = b @ b.T + 40 * np.eye(40)
    L = cholesky(a)
    assert np.allclose(L, np.tril(L))
    assert np.linalg.norm(L @ L.T - a) / np.linalg.norm(a) <= 1e-10


# --- gradient ----------------------------------------------------------


def test_gradient_square():
    v, g = gradient(lambda x: (x**2).sum(), [3.0])
    assert v == 9.0
    np.testing.assert_allclose(g, [6.0])


def test_gradient_tanh_at_zero():
    v, g = gradient(lambda x: ad.tanh(x).sum(), [0.0])
    assert v == 0.0
    np.testing.assert_allclose(g, [1.0])


def test_gradient_least_squares_matches_formula():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    x = rng.standard_normal(3)
    v, g = gradient(lambda z: ((A @ z - b) ** 2).sum(), x)
    np.testing.assert_allclose(v, np.sum((A @ x - b) ** 2))
    np.testing.assert_allclose(g, 2 * A.T @ (A @ x - b), rtol=1e-12)


def test_gradient_all_primitives_vs_fd():
    rng = np.random.default_rng(4)
    W = rng.standard_normal((3, 4))

    def f(x):
        h = ad.tanh(x @ W) / (1.0 + ad.exp(-x.sum()))
        return ad.log(1.0 + (h * h).sum()) + ad.dot(x, x) ** 1.5 - x[1] / 2.0 + np.sum(x.reshape(3, 1).T)

    for _ in range(10):
        x = rng.standard_normal(3)
        _, g = gradient(f, x)
        fd = central_fd(lambda z: gradient(f, z)[0], x)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_gradient_numpy_ufuncs_dispatch():
    _, g = gradient(lambda x: np.sum(np.exp(x) * np.tanh(x)), [0.5, -0.2])
    x = np.array([0.5, -0.2])
    np.testing.assert_allclose(g, np.exp(x) * np.tanh(x) + np.exp(x) / np.cosh(x) ** 2)


def test_unsupported_primitive_rejected_at_build():
    with pytest.raises(UnsupportedPrimitiveError, match="sin"):
        gradient(lambda x: np.sin(x).sum(), [1.0])
    with pytest.raises(UnsupportedPrimitiveError):
        gradient(lambda x: np.linalg.norm(x), [1.0, 2.0])


def test_gradient_broadcast_bias():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((6, 2))

    def f(theta):
        W = theta[:4].reshape(2, 2)
        b = theta[4:]
        return ((X @ W + b) ** 2).sum()

    theta = rng.standard_normal(6)
    _, g = gradient(f, theta)
    fd = central_fd(lambda t: gradient(f, t)[0], theta)
    np.testing.assert_allclose(g, fd, rtol=1e-7)


# --- minimize ----------------------------------------------------------


@pytest.mark.parametrize("method", ["adam", "lbfgs"])
def test_minimize_quadratic_bowl(method):
    c = np.array([1.0, -2.0, 0.5])
    cfg = OptimizerConfig(method=method, step_size=0.05, max_iter=20000, gtol=1e-10, decay=1e-3)
    res = minimize(lambda x: ((x - c) ** 2).sum(), np.zeros(3), cfg)
    np.testing.assert_allclose(res.x, c, atol=1e-6)


@pytest.mark.parametrize("method", ["adam", "lbfgs"])
def test_minimize_rosenbrock(method):
    def rosen(x):
        return (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2

    cfg = OptimizerConfig(method=method, step_size=0.02, max_iter=30000, gtol=1e-10, decay=0.01)
    res = minimize(rosen, [-1.2, 1.0], cfg)
    assert res.fun <= 1e-4
    assert res.fun <= 24.2


@pytest.mark.parametrize("method", ["adam", "lbfgs"])
def test_minimize_constant_returns_x0(method):
    res = minimize(lambda x: (x * 0.0).sum() + 3.0, [1.0, 2.0], OptimizerConfig(method=method))
    np.testing.assert_array_equal(res.x, [1.0, 2.0])
    assert res.n_iter == 0 and res.converged


def test_minimize_nan_aborts_with_iterate():
    # log of a negative number after the first steps
    cfg = OptimizerConfig(step_size=0.5, max_iter=100)
    with pytest.raises(OptimizationError) as info:
        minimize(lambda x: ad.log(x).sum() + (x * 10.0).sum(), [1.0], cfg)
    assert info.value.iteration >= 1
    assert np.all(np.isfinite(info.value.x_last))


def test_minimize_deterministic():
    cfg = OptimizerConfig(max_iter=300, step_size=0.01)
    f = lambda x: (ad.tanh(x) ** 2).sum() + 0.1 * (x**2).sum()  # noqa: E731
    a = minimize(f, [1.0, -3.0], cfg, RngStream(1))
    b = minimize(f, [1.0, -3.0], cfg, RngStream(1))
    np.testing.assert_array_equal(a.x, b.x)


# --- random streams ----------------------------------------------------


def test_std_normal_precondition():
    with pytest.raises(ValueError):
        sample_std_normal(RngStream(0), 0)


def test_std_normal_moments():
    z = sample_std_normal(RngStream(123, (7,)), 10**6)
    assert abs(z.mean()) <= 0.005
    assert abs(z.var() - 1.0) <= 0.01


def test_std_normal_deterministic_and_independent():
    s = RngStream(42).child(3)
    np.testing.assert_array_equal(sample_std_normal(s, 100), sample_std_normal(s, 100))
    a = sample_std_normal(RngStream(42).child(3), 10000)
    b = sample_std_normal(RngStream(42).child(4), 10000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.04
