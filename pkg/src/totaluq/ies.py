"""
Iterative ensemble smoother in ensemble Gauss-Levenberg-Marquardt form.

Each iteration replaces every member by

    y_j <- y_j - C_yd (C_dd + (1 + lam) S)^{-1} (d_j - d_obs - e_j)

with empirical covariances over the current ensemble, fixed perturbations
``e_j ~ N(0, S)`` and a diagonal observation covariance ``S``. A trial is
accepted when the ensemble-mean misfit drops; then ``lam`` is halved,
otherwise it grows tenfold and the trial is retried from the same ensemble.
Every trial costs one forward run per member and counts against the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .inversion import Observations, PosteriorEnsemble
from .numerics import RngStream, cholesky
from .pde_solver import DewateringError, FlowProblem, PicardError, solve

__all__ = ["ForwardError", "IESConfig", "IESResult", "flow_forward", "ies_update", "mean_misfit", "run_ies"]

# sub-stream tags
_PRIOR, _RESAMPLE, _EPS = 0, 1, 2

FORWARD_FAILURES = (PicardError, DewateringError, FloatingPointError, np.linalg.LinAlgError)


class ForwardError(RuntimeError):
    def __init__(self, member: int, cause: Exception):
        super().__init__(f"forward run failed twice for member {member}: {cause}")
        self.member = member


@dataclass(frozen=True)
class IESConfig:
    """IES settings.

    ``ensemble_size=None`` uses ``budget // (n_iterations + 1)``;
    ``lambda0=None`` uses the misfit-scaled start value.
    """

    n_iterations: int = 3
    budget: int = 5000
    ensemble_size: int | None = None
    lambda0: float | None = None
    lambda_down: float = 0.5
    lambda_up: float = 10.0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.lambda0 is not None and self.lambda0 < 0:
            raise ValueError("lambda0 must be >= 0")
        if self.size < 2:
            raise ValueError("ensemble size must be >= 2")
        if self.budget < self.size * (self.n_iterations + 1):
            raise ValueError("budget cannot cover the prior run plus n_iterations updates")

    @property
    def size(self) -> int:
        return self.ensemble_size if self.ensemble_size is not None else self.budget // (self.n_iterations + 1)


@dataclass
class IESResult:
    ensemble: np.ndarray
    misfits: list  # initial, then one per accepted iteration
    lambdas: list  # damping used by each trial
    accepted: list  # one flag per trial
    n_calls: int
    perturbations: np.ndarray
    outputs: np.ndarray = field(repr=False, default=None)

    @property
    def n_accepted(self) -> int:
        return int(sum(self.accepted))

    def posterior(self) -> PosteriorEnsemble:
        return PosteriorEnsemble(self.ensemble, "IES", "field", calls=self.n_calls)


def mean_misfit(d, d_obs, var) -> float:
    """Ensemble mean of ``|d_j - d_obs|^2`` weighted by ``1 / var``."""
    r = np.asarray(d) - d_obs
    return float(np.mean(np.sum(r * r / var, axis=1)))


def ies_update(y, d, d_obs, eps, var, lam):
    """One damped ensemble update of the rows of ``y``.

    Parameters
    ----------
    y : (n, n_par) ndarray
    d : (n, n_obs) ndarray
        Forward outputs of the rows of ``y``.
    var : float or (n_obs,) ndarray
        Diagonal observation error variance.
    lam : float
        Damping; ``lam -> inf`` freezes the ensemble.
    """
    n = y.shape[0]
    ya = y - y.mean(axis=0)
    da = d - d.mean(axis=0)
    c_yd = ya.T @ da / (n - 1)
    c_dd = da.T @ da / (n - 1)
    a = c_dd + (1.0 + lam) * np.diag(np.broadcast_to(var, d.shape[1]))
    factor = cholesky(0.5 * (a + a.T))
    innov = (d - d_obs - eps).T
    return y - (c_yd @ cho_solve((factor, True), innov)).T


def flow_forward(problem: FlowProblem, obs: Observations):
    """``y -> u`` at the observation entries through the PDE solver."""

    def forward(y):
        return solve(problem, y).ravel()[obs.u_index]

    return forward


def run_ies(forward, prior, obs: Observations, var, cfg: IESConfig, rng: RngStream) -> IESResult:
    """Run the smoother.

    Parameters
    ----------
    forward : callable
        ``y -> d`` (predicted observations). Failures listed in
        ``FORWARD_FAILURES`` trigger one prior resample of that member.
    prior : callable or ndarray
        ``stream -> y`` drawing one member, or a ready ``(n, n_par)`` ensemble.
    var : float or ndarray
        Observation error variance.
    """
    n = cfg.size
    draw = prior if callable(prior) else None
    if draw is None:
        y = np.array(prior, dtype=float, copy=True)
        if y.shape[0] != n:
            raise ValueError(f"prior ensemble has {y.shape[0]} members, config wants {n}")
    else:
        y = np.stack([np.asarray(draw(rng.child(_PRIOR, j)), dtype=float) for j in range(n)])
    d_obs = obs.u_values
    var = np.broadcast_to(np.asarray(var, dtype=float), d_obs.shape)
    if obs.n_u == 0:
        return IESResult(y, [], [], [], 0, np.zeros((n, 0)))
    calls = 0

    def run_member(j, yj, allow_resample):
        nonlocal calls
        calls += 1
        try:
            return yj, np.asarray(forward(yj), dtype=float)
        except FORWARD_FAILURES as exc:
            if not allow_resample or draw is None:
                raise ForwardError(j, exc) from exc
            fresh = np.asarray(draw(rng.child(_RESAMPLE, j)), dtype=float)
            calls += 1
            try:
                return fresh, np.asarray(forward(fresh), dtype=float)
            except FORWARD_FAILURES as exc2:
                raise ForwardError(j, exc2) from exc2

    def run_all(ys, allow_resample):
        out = [run_member(j, ys[j], allow_resample) for j in range(n)]
        return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])

    y, d = run_all(y, True)
    eps = rng.child(_EPS).generator().normal(0.0, 1.0, d.shape) * np.sqrt(var)
    phi = mean_misfit(d, d_obs, var)
    lam = cfg.lambda0
    if lam is None:
        lam = 10.0 ** math.floor(math.log10(max(phi, 1e-300) / (2 * obs.n_u)))
    misfits, lambdas, accepted = [phi], [], []
    n_ok = 0
    while n_ok < cfg.n_iterations and calls + n <= cfg.budget:
        trial = ies_update(y, d, d_obs, eps, var, lam)
        lambdas.append(lam)
        try:
            trial, d_trial = run_all(trial, False)
        except ForwardError:
            accepted.append(False)
            lam *= cfg.lambda_up
            continue
        phi_trial = mean_misfit(d_trial, d_obs, var)
        if phi_trial < phi:
            y, d, phi = trial, d_trial, phi_trial
            misfits.append(phi)
            accepted.append(True)
            lam *= cfg.lambda_down
            n_ok += 1
        else:
            accepted.append(False)
            lam *= cfg.lambda_up
    return IESResult(y, misfits, lambdas, accepted, calls, eps, d)
