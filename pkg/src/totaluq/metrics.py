"""
Error norms, interval coverage and log predictive probability.

All functions take flat (or flattenable) arrays; u fields are scored over
every active cell and time step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

__all__ = [
    "VARIANCE_FLOOR",
    "PosteriorSummary",
    "coverage",
    "error_norms",
    "lpp",
    "lpp_pointwise",
    "summarize",
    "write_summaries_csv",
]

VARIANCE_FLOOR = 1e-12
CSV_COLUMNS = ("method", "noise_var", "l2_rel", "linf", "lpp", "coverage")


def _flat(*arrays):
    out = [np.asarray(a, dtype=float).ravel() for a in arrays]
    if len({a.size for a in out}) != 1:
        raise ValueError("fields have different supports")
    return out


def error_norms(mean, ref) -> tuple[float, float]:
    """Relative l2 error and absolute max error of ``mean`` against ``ref``."""
    m, r = _flat(mean, ref)
    nr = np.linalg.norm(r)
    if nr == 0.0:
        raise ValueError("reference field has zero norm")
    d = m - r
    return float(np.linalg.norm(d) / nr), float(np.max(np.abs(d)))


def coverage(mean, var, ref, level: float = 0.95) -> tuple[np.ndarray, float]:
    """Points with ``|mean - ref| <= z * std`` for a central ``level`` interval.

    Returns the boolean map (shape of ``mean``) and the covered fraction.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    shape = np.shape(mean)
    m, v, r = _flat(mean, var, ref)
    if np.any(v < 0):
        raise ValueError("negative variance")
    z = norm.ppf(0.5 + level / 2.0)
    hit = np.abs(m - r) <= z * np.sqrt(v)
    return hit.reshape(shape), float(hit.mean())


def lpp_pointwise(mean, var, ref, floor: float = VARIANCE_FLOOR) -> np.ndarray:
    m, v, r = _flat(mean, var, ref)
    v = np.maximum(v, floor)
    return -((m - r) ** 2 / (2 * v) + 0.5 * np.log(2 * np.pi * v))


def lpp(mean, var, ref, floor: float = VARIANCE_FLOOR) -> float:
    """Gaussian log predictive probability of ``ref``, summed over points.

    Variances are floored at ``floor`` so degenerate ensembles score finitely.
    """
    return float(np.sum(lpp_pointwise(mean, var, ref, floor)))


@dataclass
class PosteriorSummary:
    method: str
    noise_var: float
    mean: np.ndarray
    var: np.ndarray
    covered: np.ndarray
    l2_rel: float
    linf: float
    lpp: float
    n_covered: int
    n_total: int
    level: float = 0.95
    variance_floor: float = VARIANCE_FLOOR

    @property
    def coverage(self) -> float:
        return self.n_covered / self.n_total

    def row(self) -> dict:
        return {
            "method": self.method,
            "noise_var": self.noise_var,
            "l2_rel": self.l2_rel,
            "linf": self.linf,
            "lpp": self.lpp,
            "coverage": self.coverage,
        }

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k not in ("mean", "var", "covered")}
        d["coverage"] = self.coverage
        return json.dumps(d, indent=2, sort_keys=True)


def summarize(mean, var, ref, method: str = "", noise_var: float = float("nan"), level: float = 0.95):
    """Bundle error norms, coverage and LPP for one estimate."""
    l2, linf = error_norms(mean, ref)
    hit, _ = coverage(mean, var, ref, level)
    return PosteriorSummary(
        method=method,
        noise_var=float(noise_var),
        mean=np.asarray(mean, dtype=float),
        var=np.asarray(var, dtype=float),
        covered=hit,
        l2_rel=l2,
        linf=linf,
        lpp=lpp(mean, var, ref),
        n_covered=int(hit.sum()),
        n_total=int(hit.size),
        level=level,
    )


def write_summaries_csv(path, summaries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for s in summaries:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in s.row().items()})
