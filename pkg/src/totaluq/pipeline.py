"""
In-memory stages of the analog experiment.

The CLI wraps these with persistence; tests call them directly. Every stage
draws from its own branch of the root stream, so stages can be rerun
independently with identical results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .analog import AnalogSpec, build_analog, default_prior
from .ies import IESConfig, flow_forward, run_ies
from .inversion import (
    Bases,
    NoiseModel,
    Observations,
    PosteriorEnsemble,
    de_inverse,
    generate_measurements,
    posterior_field_stats,
    sample_posterior_total,
)
from .kle import decode, encode, fit_kle
from .numerics import OptimizerConfig, RngStream
from .pde_solver import scenario, solve
from .random_field import prior_factor, sample_fields
from .surrogate import TrainConfig, build_ensemble, estimate_surrogate_variance

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "Surrogates",
    "evaluate_u",
    "generate",
    "heldout_report",
    "invert",
    "run_ies_analog",
    "train_surrogates",
]

# branches of the root stream
S_TRAIN, S_REF, S_MEAS, S_DE, S_RAND, S_TEST, S_RI, S_IES = range(8)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of the analog experiment (defaults: desk-scale run)."""

    analog: AnalogSpec = field(default_factory=AnalogSpec)
    mean_k: float = 5.0
    prior_variance: float = 0.25
    length_cells: float = 10.0
    n_train: int = 500
    n_test: int = 50
    n_ens: int = 50
    rtol_y: float = 0.069
    rtol_u: float = 0.00045
    hidden: tuple = (128, 128)
    sigma_eta2: float = 1e-8
    sigma_theta2: float = 1e-3
    train_method: str = "lbfgs"
    train_iters: int = 500
    train_step: float = 1e-3
    var_u: float = 1e-2
    var_model: float = 0.0
    inverse_iters: int = 1000
    ies_iterations: int = 3
    ies_budget: int | None = None  # defaults to n_train
    pumping_scale: float = 1.5
    recharge_scale: float = 0.6
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 2 or self.n_ens < 2 or self.n_test < 1:
            raise ValueError("need n_train >= 2, n_ens >= 2, n_test >= 1")
        for name in ("rtol_y", "rtol_u"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.var_u < 0 or self.var_model < 0:
            raise ValueError("noise variances must be >= 0")

    @property
    def budget(self) -> int:
        return self.n_train if self.ies_budget is None else self.ies_budget

    def train_config(self) -> TrainConfig:
        opt = OptimizerConfig(method=self.train_method, max_iter=self.train_iters, step_size=self.train_step, gtol=1e-10)
        return TrainConfig(self.sigma_eta2, self.sigma_theta2, tuple(self.hidden), opt)

    def noise(self, var_surrogate: float = 0.0) -> NoiseModel:
        return NoiseModel(var_u=self.var_u, var_model=self.var_model, var_surrogate=var_surrogate)


def _setup(cfg: ExperimentConfig):
    problem, obs_spec = build_analog(cfg.analog)
    mean, kernel = default_prior(cfg.mean_k, cfg.prior_variance, cfg.length_cells, cfg.analog.cell_size)
    return problem, obs_spec, mean, kernel


@dataclass
class Dataset:
    y_train: np.ndarray  # (n_train, n_active)
    u_train: np.ndarray  # (n_train, n_steps * n_active)
    y_test: np.ndarray
    u_test: np.ndarray  # (n_test, n_steps * n_active)
    y_ref: np.ndarray
    u_ref: np.ndarray  # (n_steps, n_active)
    obs: Observations
    seconds: float = 0.0


def generate(cfg: ExperimentConfig) -> Dataset:
    """Prior draws with their PDE solutions, a reference field and measurements."""
    t0 = time.perf_counter()
    problem, obs_spec, mean, kernel = _setup(cfg)
    root = RngStream(cfg.seed)
    factor = prior_factor(problem.grid, kernel)
    y_train = sample_fields(problem.grid, kernel, mean, cfg.n_train, root.child(S_TRAIN), factor)
    u_train = np.stack([solve(problem, y).ravel() for y in y_train])
    y_test = sample_fields(problem.grid, kernel, mean, cfg.n_test, root.child(S_TEST), factor)
    u_test = np.stack([solve(problem, y).ravel() for y in y_test])
    y_ref = sample_fields(problem.grid, kernel, mean, 1, root.child(S_REF), factor)[0]
    u_ref = solve(problem, y_ref)
    obs = generate_measurements(u_ref, obs_spec, problem, cfg.var_u, root.child(S_MEAS))
    return Dataset(y_train, u_train, y_test, u_test, y_ref, u_ref, obs, time.perf_counter() - t0)


@dataclass
class Surrogates:
    bases: Bases
    de: object
    randomized: object
    var_surrogate: float
    seconds: float = 0.0


def train_surrogates(cfg: ExperimentConfig, data: Dataset) -> Surrogates:
    """KLE bases plus DE and randomized ensembles; estimates the surrogate variance."""
    t0 = time.perf_counter()
    y_basis = fit_kle(data.y_train, cfg.rtol_y)
    u_basis = fit_kle(data.u_train, cfg.rtol_u)
    xi = encode(y_basis, data.y_train)
    eta = encode(u_basis, data.u_train)
    tc = cfg.train_config()
    root = RngStream(cfg.seed)
    de = build_ensemble((xi, eta), tc, "de", cfg.n_ens, root.child(S_DE))
    rz = build_ensemble((xi, eta), tc, "randomized", cfg.n_ens, root.child(S_RAND))
    xi_test = encode(y_basis, data.y_test)
    var_s = estimate_surrogate_variance(rz, xi_test, u_basis, data.obs.u_index)
    return Surrogates(Bases(y_basis, u_basis), de, rz, var_s, time.perf_counter() - t0)


def heldout_report(cfg: ExperimentConfig, data: Dataset, sur: Surrogates) -> list:
    """Held-out accuracy of both ensembles in eta space.

    The predictive variance is the ensemble variance plus ``sigma_eta2``.
    """
    xi = encode(sur.bases.y, data.y_test)
    eta = encode(sur.bases.u, data.u_test)
    rows = []
    for ens in (sur.de, sur.randomized):
        out = ens.outputs(xi)
        mean, var = out.mean(0), out.var(0, ddof=1) + cfg.sigma_eta2
        l2, _ = metrics.error_norms(mean, eta)
        rows.append({"kind": ens.kind, "l2_rel": l2, "lpp": metrics.lpp(mean, var, eta), "degenerate": ens.degenerate})
    return rows


def invert(cfg: ExperimentConfig, method: str, data: Dataset, sur: Surrogates | None = None, inverse_cfg=None):
    """Posterior ensemble of y by ``"ri"``, ``"de"`` or ``"ies"``.

    Returns
    -------
    post : PosteriorEnsemble
    mean, var : ndarray
        Pointwise y statistics over active cells.
    """
    root = RngStream(cfg.seed)
    opt = inverse_cfg or OptimizerConfig(method="lbfgs", max_iter=cfg.inverse_iters, gtol=1e-9)
    if method in ("ri", "de"):
        if sur is None:
            raise ValueError(f"method {method!r} needs trained surrogates")
        if method == "ri":
            post = sample_posterior_total(data.obs, cfg.noise(), sur.randomized, sur.bases, root.child(S_RI), opt)
        else:
            post = de_inverse(data.obs, cfg.noise(sur.var_surrogate), sur.de, sur.bases, None, opt)
        mean, var = posterior_field_stats(post, sur.bases.y)
        return post, mean, var
    if method == "ies":
        res = run_ies_analog(cfg, data)
        post = res.posterior()
        post.losses = np.array(res.misfits + [np.nan] * (len(post) - len(res.misfits)))[: len(post)]
        mean, var = posterior_field_stats(post)
        return post, mean, var
    raise ValueError(f"unknown method {method!r}")


def run_ies_analog(cfg: ExperimentConfig, data: Dataset, forward=None):
    """IES on the analog with prior draws ``mean + L z`` and budget ``cfg.budget``.

    ``forward`` wraps the flow forward map (e.g. to count calls).
    """
    problem, _, mean_y, kernel = _setup(cfg)
    factor = prior_factor(problem.grid, kernel)

    def draw(stream):
        return mean_y + factor @ stream.generator().standard_normal(problem.grid.n_active)

    fwd = flow_forward(problem, data.obs)
    if forward is not None:
        fwd = forward(fwd)
    ies_cfg = IESConfig(n_iterations=cfg.ies_iterations, budget=cfg.budget)
    return run_ies(fwd, draw, data.obs, cfg.noise().total_var, ies_cfg, RngStream(cfg.seed).child(S_IES))


def posterior_fields(post: PosteriorEnsemble, bases: Bases | None):
    if post.space == "field":
        return post.samples
    return decode(bases.y, post.samples)


def evaluate_u(cfg: ExperimentConfig, post: PosteriorEnsemble, bases: Bases | None, y_ref, mode: str = "predict"):
    """Solve the PDE for every posterior y sample and the reference.

    ``mode="forecast"`` applies the scaled pumping/recharge scenario.

    Returns
    -------
    summary : PosteriorSummary
        u statistics over all active cells and steps against the reference run.
    n_calls : int
    """
    problem, _, _, _ = _setup(cfg)
    if mode == "forecast":
        problem = scenario(problem, cfg.pumping_scale, cfg.recharge_scale)
    elif mode != "predict":
        raise ValueError(f"unknown mode {mode!r}")
    ys = posterior_fields(post, bases)
    us = np.stack([solve(problem, y) for y in ys])
    u_ref = solve(problem, y_ref)
    s = metrics.summarize(us.mean(0), us.var(0, ddof=1), u_ref, method=post.method, noise_var=cfg.var_u, level=cfg.level)
    return s, len(ys) + 1


def raster(grid, values, fill=np.nan) -> np.ndarray:
    """Scatter active-cell values onto the full (ny, nx) grid."""
    full = np.full(grid.n_cells, fill, dtype=float)
    full[grid.active_cells] = values
    return full.reshape(grid.ny, grid.nx)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    analog_kw = {k: kw.pop(k) for k in list(kw) if k in AnalogSpec.__dataclass_fields__}
    if analog_kw:
        kw["analog"] = replace(cfg.analog, **analog_kw)
    return replace(cfg, **kw)
