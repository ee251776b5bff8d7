"""
Empirical Karhunen-Loeve expansions of field ensembles.

Modes come from the method of snapshots: the small Gram matrix of centred
snapshots shares its nonzero spectrum with the (support x support) sample
covariance, which is never formed. Latent coefficients are scaled to unit
prior variance, ``xi_i = phi_i^T (f - mean) / sqrt(lambda_i)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import sym_eig

__all__ = ["KLEBasis", "decode", "encode", "fit_kle", "retained_energy"]

# eigenvalues below this fraction of the largest are numerical zeros
_RANK_TOL = 1e-12


@dataclass(frozen=True)
class KLEBasis:
    """Truncated expansion ``mean + modes @ (sqrt(eigenvalues) * xi)``.

    Attributes
    ----------
    mean : (n,) ndarray
    modes : (n, n_modes) ndarray
        Orthonormal columns.
    eigenvalues : (n_modes,) ndarray
        Retained eigenvalues, descending.
    spectrum : (rank,) ndarray
        Every computable (nonzero) eigenvalue, used for energy ratios.
    rtol : float
        Requested tail-energy tolerance.
    """

    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    spectrum: np.ndarray
    rtol: float

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def support(self) -> int:
        return self.mean.size

    @property
    def scaled_modes(self) -> np.ndarray:
        """``modes * sqrt(eigenvalues)``: the linear part of ``decode``."""
        return self.modes * np.sqrt(self.eigenvalues)


def fit_kle(snapshots, rtol: float, max_modes: int | None = None) -> KLEBasis:
    """Fit a truncated KLE to an ensemble of field snapshots.

    Parameters
    ----------
    snapshots : (n_snap, n) array_like
        One field per row.
    rtol : float
        Keep the smallest number of modes whose discarded share of the
        computable energy is ``<= rtol``.
    max_modes : int, optional
        Hard cap on the number of modes.

    Returns
    -------
    KLEBasis
    """
    s = np.asarray(snapshots, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("need at least two snapshots of equal length")
    if not 0.0 < rtol < 1.0:
        raise ValueError(f"rtol must lie in (0, 1), got {rtol}")
    n_snap = s.shape[0]
    mean = s.mean(axis=0)
    a = s - mean
    gram = a @ a.T / (n_snap - 1)
    gram = 0.5 * (gram + gram.T)
    vals, vecs = sym_eig(gram)
    top = vals[0] if vals.size else 0.0
    keep = vals > _RANK_TOL * max(top, 0.0)
    if top <= 0.0 or not keep.any():
        warnings.warn("snapshots have zero variance; basis has no modes", RuntimeWarning, stacklevel=2)
        empty = np.zeros((s.shape[1], 0))
        return KLEBasis(mean, empty, np.zeros(0), np.zeros(0), rtol)
    vals, vecs = vals[keep], vecs[:, keep]
    # phi = A^T v / sqrt((N-1) lambda) has unit norm
    modes = a.T @ vecs / np.sqrt((n_snap - 1) * vals)
    total = vals.sum()
    tail = 1.0 - np.cumsum(vals) / total
    n_keep = int(np.argmax(tail <= rtol)) + 1 if np.any(tail <= rtol) else vals.size
    if max_modes is not None:
        n_keep = min(n_keep, max_modes)
    # re-orthonormalize to remove roundoff from the snapshot products
    q, r = np.linalg.qr(modes[:, :n_keep])
    q *= np.sign(np.diag(r))
    return KLEBasis(mean, q, vals[:n_keep].copy(), vals.copy(), rtol)


def encode(basis: KLEBasis, field) -> np.ndarray:
    """Latent coefficients of ``field`` (or of each row of a 2-D array)."""
    f = np.asarray(field, dtype=float)
    if f.shape[-1] != basis.support:
        raise ValueError(f"field length {f.shape[-1]} does not match basis support {basis.support}")
    return (f - basis.mean) @ basis.modes / np.sqrt(basis.eigenvalues)


def decode(basis: KLEBasis, coeffs):
    """Field from latent coefficients; shorter vectors are zero-padded.

    Works on plain arrays and on autodiff variables (1-D or batched rows).
    """
    m = coeffs.shape[-1]
    if m > basis.n_modes:
        raise ValueError(f"{m} coefficients for a basis with {basis.n_modes} modes")
    return coeffs @ basis.scaled_modes[:, :m].T + basis.mean


def retained_energy(basis: KLEBasis) -> float:
    """Share of the computable spectrum carried by the retained modes."""
    if basis.spectrum.size == 0:
        return 1.0
    return float(basis.eigenvalues.sum() / basis.spectrum.sum())
