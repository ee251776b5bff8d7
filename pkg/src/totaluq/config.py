"""
INI experiment configuration.

Sections and keys (all optional; defaults are the desk-scale run)::

    [analog]     nx, ny, cell_size, n_steps, step_days, specific_yield,
                 recharge, ref_thickness, river_top, river_bottom,
                 river_conductance, ghb_head, ghb_conductance
    [prior]      mean_k, variance, length_cells
    [data]       n_train, n_test, seed
    [kle]        rtol_y, rtol_u
    [surrogate]  n_ens, hidden (comma list), sigma_eta2, sigma_theta2,
                 train_method (adam|lbfgs), train_iters, train_step
    [inversion]  var_u, var_model, inverse_iters, level
    [ies]        iterations, budget
    [forecast]   pumping_scale, recharge_scale

Unknown sections or keys are errors, so typos never pass silently.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, fields, replace
from pathlib import Path

from .analog import AnalogSpec
from .pipeline import ExperimentConfig

__all__ = ["ConfigError", "config_hash", "dump_config", "load_config"]


class ConfigError(ValueError):
    pass


_ANALOG_KEYS = {f.name for f in fields(AnalogSpec)} - {"pumping_scale", "recharge_scale"}

# section -> {ini key: ExperimentConfig field}
_MAP = {
    "prior": {"mean_k": "mean_k", "variance": "prior_variance", "length_cells": "length_cells"},
    "data": {"n_train": "n_train", "n_test": "n_test", "seed": "seed"},
    "kle": {"rtol_y": "rtol_y", "rtol_u": "rtol_u"},
    "surrogate": {
        "n_ens": "n_ens",
        "hidden": "hidden",
        "sigma_eta2": "sigma_eta2",
        "sigma_theta2": "sigma_theta2",
        "train_method": "train_method",
        "train_iters": "train_iters",
        "train_step": "train_step",
    },
    "inversion": {"var_u": "var_u", "var_model": "var_model", "inverse_iters": "inverse_iters", "level": "level"},
    "ies": {"iterations": "ies_iterations", "budget": "ies_budget"},
    "forecast": {"pumping_scale": "pumping_scale", "recharge_scale": "recharge_scale"},
}


def _convert(value: str, default):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value.strip()


def load_config(path=None, text: str | None = None) -> ExperimentConfig:
    """Parse an INI file (or string) into an ExperimentConfig.

    Raises
    ------
    ConfigError
        Unknown section/key, unparsable value, or failed validation.
    """
    cp = configparser.ConfigParser()
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file not found: {path}")
            cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    base = ExperimentConfig()
    kw, analog_kw = {}, {}
    try:
        for section in cp.sections():
            for key, value in cp.items(section):
                if section == "analog":
                    if key not in _ANALOG_KEYS:
                        raise ConfigError(f"unknown key [analog] {key}")
                    analog_kw[key] = _convert(value, getattr(base.analog, key))
                elif section in _MAP:
                    name = _MAP[section].get(key)
                    if name is None:
                        raise ConfigError(f"unknown key [{section}] {key}")
                    default = getattr(base, name)
                    kw[name] = int(value) if default is None else _convert(value, default)
                else:
                    raise ConfigError(f"unknown section [{section}]")
        if kw.get("train_method", "lbfgs") not in ("adam", "lbfgs"):
            raise ConfigError("train_method must be adam or lbfgs")
        return replace(base, analog=replace(base.analog, **analog_kw), **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _as_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of the resolved configuration."""
    return hashlib.sha256(json.dumps(_as_dict(cfg), sort_keys=True).encode()).hexdigest()


def dump_config(cfg: ExperimentConfig) -> str:
    """The resolved configuration as INI text (loads back to an equal config)."""
    lines = ["[analog]"]
    lines += [f"{k} = {getattr(cfg.analog, k)!r}" for k in sorted(_ANALOG_KEYS)]
    for section, keys in _MAP.items():
        lines.append(f"\n[{section}]")
        for key, name in keys.items():
            v = getattr(cfg, name)
            if v is None:
                continue
            v = ",".join(str(h) for h in v) if isinstance(v, tuple) else (v if isinstance(v, str) else repr(v))
            lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
