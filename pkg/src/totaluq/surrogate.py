"""
Fully connected latent-space surrogates ``eta ~ NN(xi; theta)``.

Parameters are one flat vector; per layer the weight matrix (fan_in x
fan_out, row-major) comes first, then the bias. Hidden layers use tanh,
the output layer is linear.

Training minimizes

    L_F(theta)  = 1/s_eta * sum_i |NN(xi_i) - eta_i|^2 + 1/s_theta * |theta|^2
    L_rF(theta) = 1/s_eta * sum_i |NN(xi_i) - eta_i - a_i|^2 + 1/s_theta * |theta - b|^2

with ``a_i ~ N(0, s_eta)`` and ``b ~ N(0, s_theta)`` drawn once per member.
The optimizer sees the loss multiplied by ``s_eta / N``; that rescaling does
not move the minimizer and keeps the numbers near one for the defaults.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .kle import KLEBasis, decode
from .numerics import OptimizationError, OptimizerConfig, RngStream, Var, minimize
from .numerics import autodiff as ad

__all__ = [
    "EnsembleError",
    "ObsMap",
    "SurrogateEnsemble",
    "SurrogateNet",
    "TrainConfig",
    "build_ensemble",
    "ensemble_stats",
    "estimate_surrogate_variance",
    "forward_loss",
    "init_params",
    "n_params",
    "predict",
    "randomized_forward_loss",
    "select_variances",
    "train",
    "train_randomized",
]


# sub-stream tags below a member's stream
_INIT, _NOISE, _BATCH = 0, 1, 2


class EnsembleError(RuntimeError):
    """A member failed to train; ``member`` is its index."""

    def __init__(self, member: int, cause: Exception):
        super().__init__(f"ensemble member {member} failed: {cause}")
        self.member = member


def n_params(widths) -> int:
    return int(sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:])))


def init_params(widths, rng: RngStream) -> np.ndarray:
    """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    gen = rng.generator()
    parts = []
    for a, b in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(a)
        parts.append(gen.uniform(-bound, bound, a * b))
        parts.append(gen.uniform(-bound, bound, b))
    return np.concatenate(parts)


def _apply(widths, theta, x):
    """Network output for parameters ``theta`` (array or Var) and inputs ``x``."""
    h = x
    k = 0
    last = len(widths) - 2
    for layer, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        w = theta[k : k + a * b].reshape(a, b)
        k += a * b
        bias = theta[k : k + b]
        k += b
        h = h @ w + bias
        if layer < last:
            h = ad.tanh(h) if isinstance(h, Var) else np.tanh(h)
    return h


@dataclass
class SurrogateNet:
    """Fully connected net with tanh hidden layers and a linear output."""

    widths: tuple
    theta: np.ndarray
    activation: str = "tanh"
    train_loss: float = float("nan")
    n_iter: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError("need at least input and output widths")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (n_params(self.widths),):
            raise ValueError(f"expected {n_params(self.widths)} parameters, got {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("non-finite parameters")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def __call__(self, xi):
        """Evaluate at ``xi`` (a vector, rows of a matrix, or an autodiff Var)."""
        return _apply(self.widths, self.theta, xi)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``hidden`` are the hidden-layer widths. ``batch_size=None`` trains full
    batch; otherwise each optimizer step sees a random mini-batch (Adam only).
    """

    sigma_eta2: float = 1e-8
    sigma_theta2: float = 1e-3
    hidden: tuple = (256, 256, 256)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(step_size=1e-3, max_iter=3000))
    batch_size: int | None = None

    def __post_init__(self):
        if not (self.sigma_eta2 > 0 and self.sigma_theta2 > 0):
            raise ValueError("training variances must be positive")
        if self.batch_size is not None and self.optimizer.method != "adam":
            raise ValueError("mini-batches need the adam optimizer")

    def widths(self, n_in: int, n_out: int) -> tuple:
        return (n_in, *self.hidden, n_out)


def _as_dataset(dataset):
    xi, eta = dataset
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    if xi.shape[0] != eta.shape[0] or xi.shape[0] < 1:
        raise ValueError("dataset needs at least one (xi, eta) pair with matching counts")
    return xi, eta


def forward_loss(theta, widths, xi, eta, sigma_eta2, sigma_theta2, alpha=None, beta=None):
    """``L_F`` (or ``L_rF`` when ``alpha``/``beta`` are given) at ``theta``."""
    target = eta if alpha is None else eta + alpha
    r = _apply(widths, theta, xi) - target
    d = theta if beta is None else theta - beta
    return (r * r).sum() / sigma_eta2 + (d * d).sum() / sigma_theta2


def randomized_forward_loss(theta, widths, xi, eta, sigma_eta2, sigma_theta2, alpha, beta):
    return forward_loss(theta, widths, xi, eta, sigma_eta2, sigma_theta2, alpha, beta)


def _fit(xi, eta, cfg: TrainConfig, rng: RngStream, alpha=None, beta=None, widths=None) -> SurrogateNet:
    widths = widths or cfg.widths(xi.shape[1], eta.shape[1])
    theta0 = init_params(widths, rng.child(_INIT))
    n = xi.shape[0]
    scale = cfg.sigma_eta2 / n
    target = eta if alpha is None else eta + alpha

    if cfg.batch_size is None or cfg.batch_size >= n:

        def objective(theta):
            return scale * forward_loss(theta, widths, xi, target, cfg.sigma_eta2, cfg.sigma_theta2, beta=beta)

    else:
        gen = rng.child(_BATCH).generator()
        bs = cfg.batch_size

        def objective(theta):
            idx = gen.choice(n, bs, replace=False)
            r = _apply(widths, theta, xi[idx]) - target[idx]
            d = theta if beta is None else theta - beta
            return scale * ((r * r).sum() * (n / bs) / cfg.sigma_eta2 + (d * d).sum() / cfg.sigma_theta2)

    res = minimize(objective, theta0, cfg.optimizer)
    full = forward_loss(res.x, widths, xi, target, cfg.sigma_eta2, cfg.sigma_theta2, beta=beta)
    return SurrogateNet(widths, res.x, train_loss=float(full), n_iter=res.n_iter)


def train(dataset, cfg: TrainConfig, rng: RngStream, widths=None) -> SurrogateNet:
    """Minimize ``L_F`` from a random initialization.

    Parameters
    ----------
    dataset : tuple of arrays
        ``(xi, eta)`` with one pair per row.
    widths : tuple, optional
        Full layer widths, overriding ``cfg.hidden``.

    Raises
    ------
    OptimizationError
        When the loss turns non-finite.
    """
    xi, eta = _as_dataset(dataset)
    return _fit(xi, eta, cfg, rng, widths=widths)


def train_randomized(dataset, cfg: TrainConfig, rng: RngStream, widths=None) -> SurrogateNet:
    """Minimize ``L_rF`` with target noise and prior shift drawn from ``rng``."""
    xi, eta = _as_dataset(dataset)
    widths = widths or cfg.widths(xi.shape[1], eta.shape[1])
    gen = rng.child(_NOISE).generator()
    alpha = gen.normal(0.0, np.sqrt(cfg.sigma_eta2), eta.shape)
    beta = gen.normal(0.0, np.sqrt(cfg.sigma_theta2), n_params(widths))
    return _fit(xi, eta, cfg, rng, alpha=alpha, beta=beta, widths=widths)


@dataclass
class SurrogateEnsemble:
    members: list
    kind: str  # "de" or "randomized"
    seeds: list
    degenerate: bool = False

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")
        if self.kind not in ("de", "randomized"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if len({m.widths for m in self.members}) != 1:
            raise ValueError("members must share one architecture")

    def __len__(self) -> int:
        return len(self.members)

    @property
    def widths(self) -> tuple:
        return self.members[0].widths

    def thetas(self) -> np.ndarray:
        return np.stack([m.theta for m in self.members])

    def outputs(self, xi) -> np.ndarray:
        """(n_members, ..., n_out) latent outputs."""
        return np.stack([m(np.asarray(xi, dtype=float)) for m in self.members])


def build_ensemble(dataset, cfg: TrainConfig, kind: str, n_ens: int, rng: RngStream, widths=None, same_init=False):
    """Train ``n_ens`` members: re-initialized ``train`` (``kind="de"``) or
    ``train_randomized`` (``kind="randomized"``).

    Member ``i`` draws everything from ``rng.child(i)``. ``same_init`` gives
    every member stream 0, which makes a DE degenerate (flagged).

    Raises
    ------
    EnsembleError
        Naming the first member whose training failed.
    """
    if n_ens < 2:
        raise ValueError("n_ens must be >= 2")
    fit = {"de": train, "randomized": train_randomized}.get(kind)
    if fit is None:
        raise ValueError(f"unknown ensemble kind {kind!r}")
    members, seeds = [], []
    for i in range(n_ens):
        stream = rng.child(0 if same_init else i)
        try:
            members.append(fit(dataset, cfg, stream, widths=widths))
        except (OptimizationError, FloatingPointError) as exc:
            raise EnsembleError(i, exc) from exc
        seeds.append((stream.seed, *stream.path))
    degenerate = bool(same_init and kind == "de")
    if degenerate:
        warnings.warn("deep ensemble with identical initializations: all members coincide", RuntimeWarning, stacklevel=2)
    return SurrogateEnsemble(members, kind, seeds, degenerate)


def predict(net: SurrogateNet, xi, u_basis: KLEBasis):
    """``u_hat = decode_u(NN(xi))``; differentiable in ``xi``."""
    return decode(u_basis, net(xi))


def ensemble_stats(ensemble: SurrogateEnsemble, xi, u_basis: KLEBasis):
    """Pointwise mean and unbiased variance of the members' u predictions."""
    u = np.stack([predict(m, np.asarray(xi, dtype=float), u_basis) for m in ensemble.members])
    return u.mean(axis=0), u.var(axis=0, ddof=1)


class ObsMap:
    """Surrogate restricted to observation points: ``xi -> u_hat[obs_index]``.

    Only the rows of the u basis at the observed (time, cell) entries are
    kept, so evaluation costs one network pass plus a small matrix product.
    """

    def __init__(self, net: SurrogateNet, u_basis: KLEBasis, obs_index):
        idx = np.asarray(obs_index, dtype=int)
        self.net = net
        self.mean = u_basis.mean[idx]
        self.phi = u_basis.scaled_modes[idx]

    def __call__(self, xi):
        return self.net(xi) @ self.phi.T + self.mean


def estimate_surrogate_variance(ensemble: SurrogateEnsemble, xi_test, u_basis: KLEBasis, obs_index) -> float:
    """Ensemble variance of u at the observation points, averaged over test inputs."""
    xi_test = np.atleast_2d(np.asarray(xi_test, dtype=float))
    if xi_test.shape[0] < 1:
        raise ValueError("need at least one test input")
    idx = np.asarray(obs_index, dtype=int)
    u = np.stack([ObsMap(m, u_basis, idx)(xi_test) for m in ensemble.members])
    return float(u.var(axis=0, ddof=1).mean())


def select_variances(train_set, test_set, grid, cfg: TrainConfig, n_ens: int, rng: RngStream, widths=None):
    """Grid search of ``(sigma_eta2, sigma_theta2)`` by held-out LPP.

    Each candidate trains a randomized ensemble; the predictive variance of a
    held-out ``eta`` is the ensemble variance plus ``sigma_eta2``.

    Returns
    -------
    best : tuple
        The pair with the largest LPP.
    table : list of (sigma_eta2, sigma_theta2, lpp)
    """
    xi_t, eta_t = _as_dataset(test_set)
    table = []
    for k, (s_eta, s_theta) in enumerate(grid):
        c = TrainConfig(s_eta, s_theta, cfg.hidden, cfg.optimizer, cfg.batch_size)
        ens = build_ensemble(train_set, c, "randomized", n_ens, rng.child(k), widths=widths)
        out = ens.outputs(xi_t)
        score = metrics.lpp(out.mean(axis=0), out.var(axis=0, ddof=1) + s_eta, eta_t)
        table.append((s_eta, s_theta, score))
    best = max(table, key=lambda r: r[2])
    return (best[0], best[1]), table
