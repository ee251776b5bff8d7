"""
MAP estimation and randomize-then-minimize posterior sampling.

Latent losses (all terms carry a factor 1/2):

    L(xi) = |u_hat(xi) - u_s - a_u|^2 / (2 var)
          + |y_hat(xi) - y_s - a_y|^2 / (2 var_y)
          + |xi - b|^2 / (2 var_xi)

* ``L_I``: no perturbations, ``var = var_u + var_model + var_surrogate``;
* ``L_I^G``: ``a_u ~ N(0, var)``, ``a_y ~ N(0, var_y)``, ``b ~ N(0, var_xi)``;
* ``L_I^nG``: as ``L_I^G`` but with ``var = var_u + var_model`` in both the
  weight and ``a_u``, and one randomized surrogate member per sample.

All samples are accepted; there is no Metropolis correction, so the
samplers are exact only for linear forward maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kle import KLEBasis, decode
from .numerics import OptimizationError, OptimizerConfig, RngStream, minimize
from .pde_solver import FlowProblem, ObsSpec, observe
from .surrogate import ObsMap, SurrogateEnsemble, SurrogateNet

__all__ = [
    "Bases",
    "LatentModel",
    "NoiseModel",
    "Observations",
    "PosteriorEnsemble",
    "SampleError",
    "de_inverse",
    "fullspace_loss",
    "gaussian_log_likelihood",
    "generate_measurements",
    "inverse_loss",
    "map_estimate",
    "posterior_field_stats",
    "sample_posterior_fullspace",
    "sample_posterior_gaussian",
    "sample_posterior_total",
]

INVERSE_OPT = OptimizerConfig(method="lbfgs", max_iter=1000, gtol=1e-9)

# sub-stream tags below a sample's stream
_ALPHA_U, _ALPHA_Y, _BETA = 0, 1, 2


class SampleError(RuntimeError):
    """Minimization for posterior sample ``sample`` failed."""

    def __init__(self, sample: int, cause: Exception):
        super().__init__(f"posterior sample {sample} failed: {cause}")
        self.sample = sample


@dataclass(frozen=True)
class Observations:
    """Measured values with their positions in the flattened fields.

    ``u_index`` points into u flattened step-major (``step * n_active + pos``);
    ``y_index`` points into the active-cell y vector.
    """

    u_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    u_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    y_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name, kind in (("u_index", int), ("u_values", float), ("y_index", int), ("y_values", float)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=kind).ravel())
        if self.u_index.size != self.u_values.size or self.y_index.size != self.y_values.size:
            raise ValueError("indices and values differ in length")
        if not (np.all(np.isfinite(self.u_values)) and np.all(np.isfinite(self.y_values))):
            raise ValueError("observation values must be finite")

    @property
    def n_u(self) -> int:
        return self.u_values.size

    @property
    def n_y(self) -> int:
        return self.y_values.size


@dataclass(frozen=True)
class NoiseModel:
    """Error variances: measurement (u, y), PDE model, surrogate, latent prior."""

    var_u: float = 1e-2
    var_y: float = 0.0
    var_model: float = 0.0
    var_surrogate: float = 0.0
    var_xi: float = 1.0

    def __post_init__(self):
        if min(self.var_u, self.var_y, self.var_model, self.var_surrogate) < 0:
            raise ValueError("variances must be >= 0")
        if not self.var_xi > 0:
            raise ValueError("prior variance var_xi must be > 0")

    @property
    def total_var(self) -> float:
        return self.var_u + self.var_model + self.var_surrogate

    @property
    def tilde_var(self) -> float:
        return self.var_u + self.var_model


@dataclass(frozen=True)
class Bases:
    y: KLEBasis
    u: KLEBasis


@dataclass
class LatentModel:
    """Maps from latent ``xi`` to predicted u and y at the observation points."""

    u_map: object
    dim: int
    y_map: object = None

    @classmethod
    def from_net(cls, net: SurrogateNet, bases: Bases, obs: Observations) -> "LatentModel":
        y_map = None
        if obs.n_y:
            rows = bases.y.scaled_modes[obs.y_index]
            mean = bases.y.mean[obs.y_index]
            y_map = lambda xi: xi @ rows.T + mean  # noqa: E731
        return cls(ObsMap(net, bases.u, obs.u_index), net.n_in, y_map)


def _as_model(net, bases, obs) -> LatentModel:
    if isinstance(net, LatentModel):
        return net
    if bases is None:
        raise ValueError("a surrogate net needs the KLE bases")
    return LatentModel.from_net(net, bases, obs)


@dataclass
class PosteriorEnsemble:
    """Posterior samples (one per row) with per-sample diagnostics.

    ``space`` is ``"latent"`` (rows are xi) or ``"field"`` (rows are y).
    ``pairing[i]`` names the surrogate member used for sample ``i``.
    """

    samples: np.ndarray
    method: str
    space: str = "latent"
    losses: np.ndarray = None
    n_iters: np.ndarray = None
    pairing: np.ndarray = None
    calls: int = 0

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        n = self.samples.shape[0]
        if n < 2:
            raise ValueError("a posterior ensemble needs at least two samples")
        if self.space not in ("latent", "field"):
            raise ValueError(f"unknown space {self.space!r}")
        self.losses = np.full(n, np.nan) if self.losses is None else np.asarray(self.losses, dtype=float)
        self.n_iters = np.zeros(n, int) if self.n_iters is None else np.asarray(self.n_iters, dtype=int)
        self.pairing = np.arange(n) if self.pairing is None else np.asarray(self.pairing, dtype=int)

    def __len__(self) -> int:
        return self.samples.shape[0]


def inverse_loss(xi, model: LatentModel, obs: Observations, var, var_y, var_xi, alpha_u=0.0, alpha_y=0.0, beta=0.0):
    """The latent loss above for one realization of the perturbations."""
    loss = ((xi - beta) * (xi - beta)).sum() * (0.5 / var_xi)
    if obs.n_u:
        if not var > 0:
            raise ValueError("u observations need a positive error variance")
        r = model.u_map(xi) - obs.u_values - alpha_u
        loss = loss + (r * r).sum() * (0.5 / var)
    if obs.n_y:
        if not var_y > 0:
            raise ValueError("y observations need var_y > 0")
        r = model.y_map(xi) - obs.y_values - alpha_y
        loss = loss + (r * r).sum() * (0.5 / var_y)
    return loss


def _draws(stream: RngStream, obs, var, noise, dim):
    a_u = stream.child(_ALPHA_U).generator().normal(0.0, np.sqrt(var), obs.n_u)
    a_y = stream.child(_ALPHA_Y).generator().normal(0.0, np.sqrt(noise.var_y), obs.n_y)
    b = stream.child(_BETA).generator().normal(0.0, np.sqrt(noise.var_xi), dim)
    return a_u, a_y, b


def map_estimate(obs, noise: NoiseModel, net, bases=None, rng: RngStream | None = None, cfg=None):
    """Minimizer of the deterministic loss ``L_I``.

    Starts from a prior draw of ``rng`` (zeros when ``rng`` is None).

    Returns
    -------
    xi : ndarray
    result : MinimizeResult
    """
    model = _as_model(net, bases, obs)
    x0 = np.zeros(model.dim) if rng is None else rng.generator().normal(0.0, np.sqrt(noise.var_xi), model.dim)
    res = minimize(
        lambda xi: inverse_loss(xi, model, obs, noise.total_var, noise.var_y, noise.var_xi), x0, cfg or INVERSE_OPT
    )
    return res.x, res


def _randomized(obs, noise, models, var, n, rng, cfg, method, pairing):
    xs, losses, iters = [], [], []
    for i in range(n):
        model = models[pairing[i]]
        a_u, a_y, b = _draws(rng.child(i), obs, var, noise, model.dim)

        def objective(xi, model=model, a_u=a_u, a_y=a_y, b=b):
            return inverse_loss(xi, model, obs, var, noise.var_y, noise.var_xi, a_u, a_y, b)

        try:
            res = minimize(objective, b, cfg or INVERSE_OPT)
        except OptimizationError as exc:
            raise SampleError(i, exc) from exc
        xs.append(res.x)
        losses.append(res.fun)
        iters.append(res.n_iter)
    return PosteriorEnsemble(np.array(xs), method, "latent", np.array(losses), np.array(iters), np.asarray(pairing))


def sample_posterior_gaussian(obs, noise: NoiseModel, net, bases=None, n_ens: int = 100, rng=None, cfg=None):
    """Minimize ``n_ens`` independently randomized ``L_I^G`` losses.

    Sample ``i`` draws its perturbations from ``rng.child(i)`` and starts
    from its own prior shift ``b``.
    """
    if n_ens < 2:
        raise ValueError("n_ens must be >= 2")
    model = _as_model(net, bases, obs)
    return _randomized(obs, noise, [model], noise.total_var, n_ens, rng, cfg, "rI-G", np.zeros(n_ens, int))


def sample_posterior_total(obs, noise: NoiseModel, ensemble, bases=None, rng=None, cfg=None):
    """rI-KL-DNN: sample ``i`` minimizes ``L_I^nG`` with surrogate member ``i``.

    The u-noise (weight and perturbation) has variance
    ``var_u + var_model``; surrogate spread enters through the members.
    """
    if isinstance(ensemble, SurrogateEnsemble):
        if ensemble.kind != "randomized":
            raise ValueError("sample_posterior_total needs a randomized ensemble")
        members = ensemble.members
    else:
        members = list(ensemble)
    models = [_as_model(m, bases, obs) for m in members]
    n = len(models)
    if n < 2:
        raise ValueError("need at least two surrogate members")
    return _randomized(obs, noise, models, noise.tilde_var, n, rng, cfg, "rI", np.arange(n))


def de_inverse(obs, noise: NoiseModel, ensemble, bases=None, rng=None, cfg=None):
    """Deterministic ``L_I`` per deep-ensemble member, all started at zero."""
    if isinstance(ensemble, SurrogateEnsemble):
        if ensemble.kind != "de":
            raise ValueError("de_inverse needs a deep ensemble")
        members = ensemble.members
    else:
        members = list(ensemble)
    xs, losses, iters = [], [], []
    for i, m in enumerate(members):
        model = _as_model(m, bases, obs)
        try:
            res = minimize(
                lambda xi, model=model: inverse_loss(xi, model, obs, noise.total_var, noise.var_y, noise.var_xi),
                np.zeros(model.dim),
                cfg or INVERSE_OPT,
            )
        except OptimizationError as exc:
            raise SampleError(i, exc) from exc
        xs.append(res.x)
        losses.append(res.fun)
        iters.append(res.n_iter)
    return PosteriorEnsemble(np.array(xs), "DE", "latent", np.array(losses), np.array(iters))


def fullspace_loss(z, u_map, obs, mean, factor, var, var_y, alpha_u=0.0, alpha_y=0.0, zeta=0.0):
    """Randomized loss over a whitened field ``y = mean + factor @ z``.

    The prior term ``|z - zeta|^2 / 2`` equals ``(y - b)^T C^{-1} (y - b) / 2``
    for ``b = mean + factor @ zeta``, a prior draw of ``y``.
    """
    y = z @ factor.T + mean
    loss = ((z - zeta) * (z - zeta)).sum() * 0.5
    if obs.n_u:
        r = u_map(y) - obs.u_values - alpha_u
        loss = loss + (r * r).sum() * (0.5 / var)
    if obs.n_y:
        r = y[obs.y_index] - obs.y_values - alpha_y
        loss = loss + (r * r).sum() * (0.5 / var_y)
    return loss


def sample_posterior_fullspace(obs, noise: NoiseModel, u_map, mean, factor, n_ens: int, rng: RngStream, cfg=None):
    """Randomized posterior samples of a field ``y`` for a generic surrogate.

    Parameters
    ----------
    u_map : callable
        ``y -> u`` at the observation points, autodiff-compatible.
    mean, factor : ndarray
        Prior mean of ``y`` and a factor ``L`` with ``L L^T = C``.

    Returns
    -------
    PosteriorEnsemble
        With ``space="field"``; rows are ``y`` samples.
    """
    if n_ens < 2:
        raise ValueError("n_ens must be >= 2")
    factor = np.asarray(factor, dtype=float)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (factor.shape[0],))
    # one surrogate, no member spread: its error stays in the weight
    var = noise.total_var
    ys, losses, iters = [], [], []
    for i in range(n_ens):
        s = rng.child(i)
        a_u = s.child(_ALPHA_U).generator().normal(0.0, np.sqrt(var), obs.n_u)
        a_y = s.child(_ALPHA_Y).generator().normal(0.0, np.sqrt(noise.var_y), obs.n_y)
        zeta = s.child(_BETA).generator().standard_normal(factor.shape[1])

        def objective(z, a_u=a_u, a_y=a_y, zeta=zeta):
            return fullspace_loss(z, u_map, obs, mean, factor, var, noise.var_y, a_u, a_y, zeta)

        try:
            res = minimize(objective, zeta, cfg or INVERSE_OPT)
        except OptimizationError as exc:
            raise SampleError(i, exc) from exc
        ys.append(mean + factor @ res.x)
        losses.append(res.fun)
        iters.append(res.n_iter)
    return PosteriorEnsemble(np.array(ys), "rI-full", "field", np.array(losses), np.array(iters))


def posterior_field_stats(post: PosteriorEnsemble, y_basis: KLEBasis | None = None):
    """Pointwise mean and unbiased variance of the decoded y samples."""
    if post.space == "latent":
        if y_basis is None:
            raise ValueError("latent samples need the y basis")
        ys = decode(y_basis, post.samples)
    else:
        ys = post.samples
    return ys.mean(axis=0), ys.var(axis=0, ddof=1)


def generate_measurements(u_ref, obs_spec: ObsSpec, problem: FlowProblem, var_u: float, rng: RngStream, y_ref=None, y_cells=(), var_y: float = 0.0):
    """Synthetic measurements ``u_ref + eps`` at the observation points.

    Optional y measurements at ``y_cells`` (global cell numbers) use
    ``y_ref + eps_y``.
    """
    if var_u < 0 or var_y < 0:
        raise ValueError("noise variances must be >= 0")
    clean = observe(u_ref, obs_spec, problem)
    u_vals = clean + rng.child(0).generator().normal(0.0, np.sqrt(var_u), clean.size)
    y_idx = problem.grid.active_index(y_cells) if len(y_cells) else np.zeros(0, int)
    y_vals = np.zeros(0)
    if len(y_idx):
        y_vals = np.asarray(y_ref)[y_idx] + rng.child(1).generator().normal(0.0, np.sqrt(var_y), len(y_idx))
    return Observations(obs_spec.flat_index(problem), u_vals, y_idx, y_vals)


def gaussian_log_likelihood(obs: Observations, noise: NoiseModel, net, xi, bases=None) -> float:
    """``log P(d | xi)`` for independent Gaussian errors.

    u residuals use ``var_u + var_model + var_surrogate``; y residuals use
    ``var_y``.
    """
    model = _as_model(net, bases, obs)
    xi = np.asarray(xi, dtype=float)
    out = 0.0
    for n, pred, vals, var in (
        (obs.n_u, model.u_map, obs.u_values, noise.total_var),
        (obs.n_y, model.y_map, obs.y_values, noise.var_y),
    ):
        if not n:
            continue
        if not var > 0:
            raise ValueError("observations present with zero error variance")
        r = np.asarray(pred(xi)) - vals
        out += -0.5 * float(r @ r) / var - 0.5 * n * np.log(2 * np.pi * var)
    return float(out)
