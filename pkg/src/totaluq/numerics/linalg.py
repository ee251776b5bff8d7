"""Dense symmetric eigendecomposition and Cholesky factorization."""

from __future__ import annotations

import numpy as np

__all__ = [
    "NotPositiveDefiniteError",
    "SymmetryError",
    "cholesky",
    "jacobi_eig",
    "sym_eig",
]


class SymmetryError(ValueError):
    """Input matrix is not symmetric within tolerance."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failed even after the maximum diagonal jitter."""

    def __init__(self, pivot: int, jitter: float):
        super().__init__(f"matrix not positive definite: pivot {pivot} failed (jitter {jitter:.3e})")
        self.pivot = pivot
        self.jitter = jitter


def _check_symmetric(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SymmetryError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-10 * scale:
        raise SymmetryError(f"matrix not symmetric: max |A - A^T| = {asym:.3e} (scale {scale:.3e})")


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude component of each eigenvector made positive;
    # first index wins on ties
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def jacobi_eig(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns unsorted eigenvalues and eigenvectors (columns).
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def sym_eig(a, method: str = "lapack"):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    a : (n, n) array_like
        Symmetric matrix; asymmetry above ``1e-10 * max|a|`` is rejected.
    method : {"lapack", "jacobi"}
        ``"jacobi"`` runs the cyclic Jacobi sweep in pure numpy, practical up to
        a few hundred rows. ``"lapack"`` delegates to ``numpy.linalg.eigh``.

    Returns
    -------
    eigenvalues : (n,) ndarray
        Sorted in descending order; ties keep their original index order.
    eigenvectors : (n, n) ndarray
        Columns, each with its largest-magnitude component positive.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_symmetric(a)
    sym = 0.5 * (a + a.T)
    if method == "jacobi":
        vals, vecs = jacobi_eig(sym)
    elif method == "lapack":
        vals, vecs = np.linalg.eigh(sym)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(-vals, kind="stable")
    return vals[order], _fix_signs(vecs[:, order])


def _cholesky_once(a: np.ndarray):
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            return None, j
        ljj = np.sqrt(d)
        L[j, j] = ljj
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / ljj
    return L, -1


def cholesky(a, jitter: bool = True, max_tries: int = 3) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T = a``.

    When the plain factorization fails and ``jitter`` is set, ``1e-10 *
    trace(a) / n`` is added to the diagonal and doubled on each retry, up to
    ``max_tries`` retries.

    Raises
    ------
    NotPositiveDefiniteError
        With the index of the failing pivot.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_symmetric(a)
    n = a.shape[0]
    L, pivot = _cholesky_once(a)
    if L is not None:
        return L
    eps = 0.0
    if jitter:
        eps = 1e-10 * max(np.trace(a), 0.0) / n
        if eps == 0.0:
            eps = 1e-10
        for _ in range(max_tries):
            L, pivot = _cholesky_once(a + eps * np.eye(n))
            if L is not None:
                return L
            eps *= 2.0
        eps /= 2.0
    raise NotPositiveDefiniteError(pivot, eps)
