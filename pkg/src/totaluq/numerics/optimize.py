"""First-order minimization of scalar objectives written against the tape."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize as _sopt

from .autodiff import Var, value_and_grad
from .rng import RngStream

__all__ = ["Adam", "MinimizeResult", "OptimizationError", "OptimizerConfig", "minimize"]


class OptimizationError(FloatingPointError):
    """Non-finite objective or gradient during minimization."""

    def __init__(self, iteration: int, x_last: np.ndarray, msg: str = "non-finite objective"):
        super().__init__(f"{msg} at iteration {iteration}")
        self.iteration = iteration
        self.x_last = x_last


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`minimize`.

    ``method`` is ``"adam"`` (adaptive moments, the default) or ``"lbfgs"``.
    ``decay`` is the learning-rate factor reached at ``max_iter`` under an
    exponential schedule; 1.0 keeps the step size fixed.
    """

    step_size: float = 1e-3
    max_iter: int = 5000
    gtol: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    method: str = "adam"
    decay: float = 1.0
    log_every: int = 100

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.gtol < 0:
            raise ValueError("gtol must be >= 0")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.method not in ("adam", "lbfgs"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    log: list = field(default_factory=list)


class Adam:
    """Stateful adaptive-moment step; elementwise, so stacked problems decouple."""

    def __init__(self, shape, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self._rate = cfg.decay ** (1.0 / max(cfg.max_iter, 1))

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g
        mhat = self.m / (1.0 - c.beta1**self.t)
        vhat = self.v / (1.0 - c.beta2**self.t)
        lr = c.step_size * self._rate ** (self.t - 1)
        return x - lr * mhat / (np.sqrt(vhat) + c.eps)


def _check(f: float, g: np.ndarray, it: int, x_last: np.ndarray) -> None:
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise OptimizationError(it, x_last)


def _adam(fg, x0, cfg: OptimizerConfig) -> MinimizeResult:
    x = x0.copy()
    f, g = fg(x)
    _check(f, g, 0, x0)
    best_x, best_f = x.copy(), f
    log = [(0, f, float(np.linalg.norm(g)))]
    opt = Adam(x.shape, cfg)
    it = 0
    converged = np.linalg.norm(g) <= cfg.gtol
    while not converged and it < cfg.max_iter:
        x_prev = x
        x = opt.step(x, g)
        it += 1
        f, g = fg(x)
        _check(f, g, it, x_prev)
        if f < best_f:
            best_x, best_f = x.copy(), f
        gn = float(np.linalg.norm(g))
        if cfg.log_every and it % cfg.log_every == 0:
            log.append((it, f, gn))
        converged = gn <= cfg.gtol
    log.append((it, f, float(np.linalg.norm(g))))
    return MinimizeResult(best_x, float(best_f), it, bool(converged), log)


def _lbfgs(fg, x0, cfg: OptimizerConfig) -> MinimizeResult:
    state = {"it": 0, "x": x0.copy()}
    log = []

    def fun(x):
        f, g = fg(x)
        _check(f, g, state["it"], state["x"])
        return f, g

    def callback(xk):
        state["it"] += 1
        state["x"] = xk.copy()

    f0, g0 = fun(x0)
    log.append((0, f0, float(np.linalg.norm(g0))))
    if np.linalg.norm(g0) <= cfg.gtol or cfg.max_iter == 0:
        return MinimizeResult(x0.copy(), float(f0), 0, bool(np.linalg.norm(g0) <= cfg.gtol), log)
    res = _sopt.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": cfg.max_iter, "gtol": cfg.gtol, "ftol": 1e-15, "maxcor": 20, "maxls": 50},
    )
    log.append((int(res.nit), float(res.fun), float(np.linalg.norm(res.jac))))
    if res.fun <= f0:
        x, f = res.x, float(res.fun)
    else:
        x, f = x0.copy(), float(f0)
    return MinimizeResult(np.asarray(x), f, int(res.nit), bool(np.linalg.norm(res.jac) <= cfg.gtol), log)


def minimize(
    objective: Callable[[Var], Var],
    x0,
    cfg: OptimizerConfig | None = None,
    rng: RngStream | None = None,
) -> MinimizeResult:
    """Minimize a differentiable scalar objective from ``x0``.

    The best iterate seen is returned, so ``result.fun <= objective(x0)``
    always holds. Both methods are deterministic; ``rng`` is accepted for
    interface symmetry with stochastic callers and is not consumed here.

    Raises
    ------
    OptimizationError
        When the objective or its gradient becomes non-finite; carries the
        iteration index and the last finite iterate.
    """
    cfg = cfg or OptimizerConfig()
    x0 = np.array(x0, dtype=np.float64, copy=True)
    fg = value_and_grad(objective)
    if cfg.method == "lbfgs":
        return _lbfgs(fg, x0, cfg)
    return _adam(fg, x0, cfg)
