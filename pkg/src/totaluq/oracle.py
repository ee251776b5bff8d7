"""
Linear-Gaussian oracles with closed-form posteriors.

Both randomized samplers are exact for linear maps with Gaussian prior and
noise: each randomized minimizer is an independent posterior draw. These
oracles compare the empirical ensembles against the conjugate answers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .inversion import LatentModel, NoiseModel, Observations, sample_posterior_gaussian
from .numerics import OptimizerConfig, RngStream
from .surrogate import TrainConfig, train_randomized

__all__ = ["OracleResult", "linear_inverse_oracle", "linear_regression_oracle"]


@dataclass
class OracleResult:
    """Empirical-vs-exact comparison of a posterior ensemble."""

    name: str
    max_z: float  # largest |mean error| in standard errors
    frobenius: float  # relative covariance error
    n_ens: int
    seconds: float
    z_tol: float = 3.0
    frob_tol: float = 0.10

    @property
    def passed(self) -> bool:
        return self.max_z <= self.z_tol and self.frobenius <= self.frob_tol

    def detail(self) -> str:
        return (
            f"{self.name}: max mean error {self.max_z:.2f} SE (<= {self.z_tol}), "
            f"cov rel. Frobenius {self.frobenius:.3f} (<= {self.frob_tol}), "
            f"N_ens={self.n_ens}, {self.seconds:.1f}s"
        )

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.detail()}"


def _compare(name, samples, mean, cov, seconds) -> OracleResult:
    n = samples.shape[0]
    se = np.sqrt(np.diag(cov) / n)
    z = np.abs(samples.mean(0) - mean) / se
    emp = np.cov(samples, rowvar=False)
    frob = np.linalg.norm(emp - cov) / np.linalg.norm(cov)
    return OracleResult(name, float(z.max()), float(frob), n, seconds)


def linear_inverse_oracle(n_obs=15, dim=20, var=1e-2, n_ens=2000, seed=0) -> OracleResult:
    """Randomized ``L_I^G`` sampling against the conjugate posterior of ``d = G xi + e``."""
    t0 = time.perf_counter()
    gen = np.random.default_rng(seed)
    G = gen.standard_normal((n_obs, dim)) / np.sqrt(dim)
    d = G @ gen.standard_normal(dim) + gen.normal(0.0, np.sqrt(var), n_obs)
    obs = Observations(np.arange(n_obs), d)
    cov = np.linalg.inv(G.T @ G / var + np.eye(dim))
    mean = cov @ G.T @ d / var
    opt = OptimizerConfig(method="lbfgs", max_iter=500, gtol=1e-10)
    post = sample_posterior_gaussian(
        obs, NoiseModel(var_u=var), LatentModel(lambda xi: xi @ G.T, dim), n_ens=n_ens, rng=RngStream(seed), cfg=opt
    )
    return _compare("linear inverse", post.samples, mean, cov, time.perf_counter() - t0)


def linear_regression_oracle(n_data=40, n_in=3, n_out=2, sigma_eta2=0.05, sigma_theta2=1.0, n_ens=2000, seed=0):
    """Randomized ``L_rF`` training of a single-layer linear net against Bayesian linear regression.

    The net computes ``eta = xi W + b``; with prior ``theta ~ N(0, sigma_theta2 I)``
    each output column is an independent conjugate regression.
    """
    t0 = time.perf_counter()
    gen = np.random.default_rng(seed)
    xi = gen.standard_normal((n_data, n_in))
    w_true = gen.standard_normal((n_in, n_out))
    eta = xi @ w_true + 0.3 + gen.normal(0.0, np.sqrt(sigma_eta2), (n_data, n_out))
    widths = (n_in, n_out)
    opt = OptimizerConfig(method="lbfgs", max_iter=500, gtol=1e-12)
    cfg = TrainConfig(sigma_eta2, sigma_theta2, (), opt)
    root = RngStream(seed)
    samples = np.stack([train_randomized((xi, eta), cfg, root.child(i), widths=widths).theta for i in range(n_ens)])

    # exact posterior over theta = [W row-major, b]
    x1 = np.hstack([xi, np.ones((n_data, 1))])
    prec = x1.T @ x1 / sigma_eta2 + np.eye(n_in + 1) / sigma_theta2
    col_cov = np.linalg.inv(prec)
    col_mean = col_cov @ x1.T @ eta / sigma_eta2  # (n_in + 1, n_out)
    mean = col_mean.ravel()  # row-major matches the theta layout
    cov = np.kron(col_cov, np.eye(n_out))
    return _compare("linear regression", samples, mean, cov, time.perf_counter() - t0)
