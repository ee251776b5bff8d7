"""
Command-line pipeline: ``generate -> train -> invert -> evaluate``, plus ``oracle``.

Every command reads its inputs from and writes its artifacts to ``--out``,
recording each artifact's SHA-256 in ``manifest.json``. A command whose
inputs are missing or were modified since they were written stops with
exit code 4 and names the artifact; nothing is regenerated silently.

Exit codes: 0 success, 2 config error, 3 numerical failure (including an
oracle outside tolerance), 4 missing or corrupt artifact.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

__all__ = ["MissingArtifact", "main"]

log = logging.getLogger("totaluq")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 2, 3, 4

MANIFEST = "manifest.json"
FORMAT_VERSIONS = {"UQF1": 1, "UQK1": 1, "UQS1": 1, "UQP1": 1, "UQO1": 1}

DATASET = ("y_train.bin", "u_train.bin", "y_test.bin", "u_test.bin", "y_ref.bin", "u_ref.bin", "observations.bin")
SURROGATE_FILES = {"ri": "surrogate_rand.bin", "de": "surrogate_de.bin"}


class MissingArtifact(FileNotFoundError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Output directory plus its manifest."""

    def __init__(self, out: Path, cfg, cfg_hash: str, serial: bool):
        self.out = out
        self.cfg = cfg
        self.hash = cfg_hash
        self.serial = serial
        out.mkdir(parents=True, exist_ok=True)
        path = out / MANIFEST
        self.manifest = json.loads(path.read_text()) if path.is_file() else {}

    def check_config(self, fresh: bool):
        """A fresh stage (generate) resets a foreign manifest; others refuse it."""
        old = self.manifest.get("config_hash")
        if old is not None and old != self.hash:
            if not fresh:
                from .config import ConfigError

                raise ConfigError(
                    f"artifacts in {self.out} were produced with config {old[:12]}, current config is "
                    f"{self.hash[:12]}; rerun generate or use another --out"
                )
            self.manifest = {}
        self.manifest.update(
            config_hash=self.hash, seed=self.cfg.seed, format_versions=FORMAT_VERSIONS, serial=self.serial
        )
        self.manifest.setdefault("artifacts", {})
        self.manifest.setdefault("commands", {})

    def need(self, *names) -> list:
        paths = []
        for name in names:
            p = self.out / name
            if not p.is_file():
                raise MissingArtifact(f"missing artifact {name} in {self.out}")
            rec = self.manifest.get("artifacts", {}).get(name)
            if rec is not None and rec["sha256"] != _sha256(p):
                raise MissingArtifact(f"artifact {name} was modified after it was written")
            paths.append(p)
        return paths

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, command: str, names, seconds: float, seeds: dict | None = None):
        for name in names:
            p = self.out / name
            self.manifest["artifacts"][name] = {"sha256": _sha256(p), "bytes": p.stat().st_size, "command": command}
        entry = {"seconds": round(seconds, 3), "artifacts": sorted(names)}
        if seeds:
            entry["seeds"] = seeds
        self.manifest["commands"][command] = entry
        (self.out / MANIFEST).write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- loaders


def _load_dataset(run: Run):
    from .persistence import read_fields, read_observations
    from .pipeline import Dataset

    paths = run.need(*DATASET)
    arr = [read_fields(p)[1] for p in paths[:6]]
    flat = lambda a: a.reshape(a.shape[0], -1)  # noqa: E731
    return Dataset(
        y_train=flat(arr[0]),
        u_train=flat(arr[1]),
        y_test=flat(arr[2]),
        u_test=flat(arr[3]),
        y_ref=arr[4].reshape(-1),
        u_ref=arr[5][0],
        obs=read_observations(paths[6]),
    )


def _load_surrogates(run: Run, method: str):
    import numpy as np

    from .inversion import Bases
    from .persistence import read_kle, read_surrogate
    from .pipeline import Surrogates

    ens, yb, ub, var = run.need(SURROGATE_FILES[method], "y_basis.bin", "u_basis.bin", "surrogate_variance.csv")
    ens = read_surrogate(ens)
    var_s = float(np.loadtxt(var, delimiter=",", skiprows=1))
    both = {"ri": (None, ens), "de": (ens, None)}[method]
    return Surrogates(Bases(read_kle(yb), read_kle(ub)), both[0], both[1], var_s)


def _summary_files(run: Run, stem: str, summary) -> list:
    from .metrics import write_summaries_csv

    (run.out / f"{stem}.json").write_text(summary.to_json() + "\n")
    write_summaries_csv(run.out / f"{stem}.csv", [summary])
    return [f"{stem}.json", f"{stem}.csv"]


def _write_results_table(run: Run) -> str:
    """Collect every summary json into one figure-ready CSV series."""
    rows = []
    for p in sorted(run.out.glob("summary_*.json")):
        d = json.loads(p.read_text())
        stage = p.stem[len("summary_") :]
        rows.append([stage, d["method"], run.cfg.n_train, d["noise_var"], d["l2_rel"], d["linf"], d["lpp"], d["coverage"]])
    lines = ["stage,method,n_train,noise_var,l2_rel,linf,lpp,coverage"]
    lines += [",".join(str(v) if isinstance(v, (str, int)) else f"{v:.17g}" for v in r) for r in rows]
    (run.out / "results.csv").write_text("\n".join(lines) + "\n")
    return "results.csv"


# ---------------------------------------------------------------- commands


def cmd_generate(run: Run, args) -> int:
    import numpy as np

    from .analog import build_analog
    from .config import dump_config
    from .persistence import export_csv, write_fields, write_observations
    from .pipeline import S_MEAS, S_REF, S_TEST, S_TRAIN, generate, raster

    run.check_config(fresh=True)
    cfg = run.cfg
    t0 = time.perf_counter()
    data = generate(cfg)
    grid = build_analog(cfg.analog)[0].grid
    n_steps = data.u_ref.shape[0]
    shaped = lambda u: u.reshape(u.shape[0], n_steps, -1)  # noqa: E731
    write_fields(run.path("y_train.bin"), data.y_train, "y")
    write_fields(run.path("u_train.bin"), shaped(data.u_train), "u")
    write_fields(run.path("y_test.bin"), data.y_test, "y")
    write_fields(run.path("u_test.bin"), shaped(data.u_test), "u")
    write_fields(run.path("y_ref.bin"), data.y_ref, "y")
    write_fields(run.path("u_ref.bin"), data.u_ref[None], "u")
    write_fields(run.path("mask.bin"), grid.active.astype(float), "mask")
    write_observations(run.path("observations.bin"), data.obs)
    o = data.obs
    export_csv(run.path("observations.csv"), np.column_stack([o.u_index, o.u_values]), ["index", "value"])
    export_csv(run.path("y_ref.csv"), raster(grid, data.y_ref))
    names = [*DATASET, "mask.bin", "observations.csv", "y_ref.csv", "config.ini"]
    run.path("config.ini").write_text(dump_config(cfg))
    seeds = {"train": [cfg.seed, S_TRAIN], "test": [cfg.seed, S_TEST], "ref": [cfg.seed, S_REF], "meas": [cfg.seed, S_MEAS]}
    run.record("generate", names, time.perf_counter() - t0, seeds)
    log.info("generate: %d training pairs, %d observations", cfg.n_train, o.n_u)
    return EXIT_OK


def cmd_train(run: Run, args) -> int:
    import numpy as np

    from .persistence import export_csv, write_kle, write_surrogate
    from .pipeline import S_DE, S_RAND, heldout_report, train_surrogates

    run.check_config(fresh=False)
    data = _load_dataset(run)
    t0 = time.perf_counter()
    sur = train_surrogates(run.cfg, data)
    write_kle(run.path("y_basis.bin"), sur.bases.y)
    write_kle(run.path("u_basis.bin"), sur.bases.u)
    write_surrogate(run.path("surrogate_de.bin"), sur.de)
    write_surrogate(run.path("surrogate_rand.bin"), sur.randomized)
    export_csv(run.path("surrogate_variance.csv"), np.array([sur.var_surrogate]), ["var_surrogate"])
    for tag, b in (("y", sur.bases.y), ("u", sur.bases.u)):
        spec = b.spectrum
        tail = 1.0 - np.cumsum(spec) / spec.sum()
        export_csv(run.path(f"kle_spectrum_{tag}.csv"), np.column_stack([spec, tail]), ["eigenvalue", "tail_ratio"])
    report = heldout_report(run.cfg, data, sur)
    lines = ["kind,l2_rel,lpp,degenerate"] + [f"{r['kind']},{r['l2_rel']:.17g},{r['lpp']:.17g},{int(r['degenerate'])}" for r in report]
    run.path("train_report.csv").write_text("\n".join(lines) + "\n")
    names = ["y_basis.bin", "u_basis.bin", "surrogate_de.bin", "surrogate_rand.bin", "surrogate_variance.csv"]
    names += ["kle_spectrum_y.csv", "kle_spectrum_u.csv", "train_report.csv"]
    seeds = {"de": [run.cfg.seed, S_DE], "randomized": [run.cfg.seed, S_RAND]}
    run.record("train", names, time.perf_counter() - t0, seeds)
    log.info("train: %d y modes, %d u modes, surrogate variance %.3g", sur.bases.y.n_modes, sur.bases.u.n_modes, sur.var_surrogate)
    return EXIT_OK


def cmd_invert(run: Run, args) -> int:
    from . import metrics
    from .analog import build_analog
    from .persistence import export_csv, write_posterior
    from .pipeline import S_IES, S_RI, invert, raster

    run.check_config(fresh=False)
    method = args.method
    sur = None if method == "ies" else _load_surrogates(run, method)
    data = _load_dataset(run)
    t0 = time.perf_counter()
    post, mean, var = invert(run.cfg, method, data, sur)
    seconds = time.perf_counter() - t0
    grid = build_analog(run.cfg.analog)[0].grid
    s = metrics.summarize(mean, var, data.y_ref, method=post.method, noise_var=run.cfg.var_u, level=run.cfg.level)
    write_posterior(run.path(f"posterior_{method}.bin"), post)
    export_csv(run.path(f"coverage_y_{method}.csv"), raster(grid, s.covered.astype(float), fill=-1.0))
    export_csv(run.path(f"y_mean_{method}.csv"), raster(grid, mean))
    export_csv(run.path(f"y_var_{method}.csv"), raster(grid, var))
    names = [f"posterior_{method}.bin", f"coverage_y_{method}.csv", f"y_mean_{method}.csv", f"y_var_{method}.csv"]
    names += _summary_files(run, f"summary_y_{method}", s)
    names.append(_write_results_table(run))
    seeds = {"ri": [run.cfg.seed, S_RI], "ies": [run.cfg.seed, S_IES]}.get(method)
    run.record(f"invert_{method}", names, seconds, seeds)
    print(f"{post.method}: l2={s.l2_rel:.4f} linf={s.linf:.4f} lpp={s.lpp:.1f} coverage={100 * s.coverage:.1f}%")
    return EXIT_OK


def cmd_evaluate(run: Run, args) -> int:
    import numpy as np

    from .inversion import Bases
    from .persistence import read_fields, read_kle, read_posterior, write_fields
    from .pipeline import evaluate_u

    run.check_config(fresh=False)
    method, mode = args.method, args.mode
    (post_path, y_ref_path) = run.need(f"posterior_{method}.bin", "y_ref.bin")
    post = read_posterior(post_path)
    bases = None
    if post.space == "latent":
        (yb,) = run.need("y_basis.bin")
        bases = Bases(read_kle(yb), None)
    y_ref = read_fields(y_ref_path)[1].reshape(-1)
    t0 = time.perf_counter()
    s, n_calls = evaluate_u(run.cfg, post, bases, y_ref, mode)
    stem = f"{method}_{mode}"
    write_fields(run.path(f"u_stats_{stem}.bin"), np.stack([s.mean, s.var]), "u")
    names = [f"u_stats_{stem}.bin", *_summary_files(run, f"summary_u_{stem}", s), _write_results_table(run)]
    run.record(f"evaluate_{stem}", names, time.perf_counter() - t0, {"solver_calls": n_calls})
    print(f"{post.method} {mode}: l2={s.l2_rel:.4g} linf={s.linf:.4g} lpp={s.lpp:.1f} coverage={100 * s.coverage:.1f}%")
    return EXIT_OK


def cmd_oracle(run: Run, args) -> int:
    from .oracle import linear_inverse_oracle, linear_regression_oracle

    results = [linear_inverse_oracle(seed=run.cfg.seed), linear_regression_oracle(seed=run.cfg.seed)]
    lines = ["name,max_z,frobenius,n_ens,passed"]
    for r in results:
        print(r.line())
        lines.append(f"{r.name},{r.max_z:.17g},{r.frobenius:.17g},{r.n_ens},{int(r.passed)}")
    run.out.mkdir(parents=True, exist_ok=True)
    run.path("oracle.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "invert": cmd_invert,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment configuration")
    common.add_argument("--seed", type=_u64, help="root seed (overrides the config)")
    common.add_argument("--out", type=Path, default=Path("run"), help="artifact directory (default: ./run)")
    common.add_argument("--serial", action="store_true", help="single-threaded BLAS for byte-identical reruns")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="totaluq", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="prior draws, PDE solves, reference field and measurements")
    sub.add_parser("train", parents=[common], help="KLE bases and DE / randomized surrogate ensembles")
    inv = sub.add_parser("invert", parents=[common], help="posterior ensemble of y")
    inv.add_argument("--method", choices=("ri", "de", "ies"), default="ri")
    ev = sub.add_parser("evaluate", parents=[common], help="u prediction or forecast from a posterior")
    ev.add_argument("--method", choices=("ri", "de", "ies"), default="ri")
    ev.add_argument("--mode", choices=("predict", "forecast"), default="predict")
    sub.add_parser("oracle", parents=[common], help="linear-Gaussian exactness checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.serial:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"

    import numpy as np

    from .config import ConfigError, config_hash, load_config
    from .ies import ForwardError
    from .inversion import SampleError
    from .numerics import OptimizationError
    from .pde_solver import DewateringError, PicardError
    from .persistence import FormatError
    from .surrogate import EnsembleError

    numeric = (PicardError, DewateringError, OptimizationError, SampleError, EnsembleError, ForwardError)
    numeric += (np.linalg.LinAlgError, FloatingPointError)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)
        run = Run(args.out, cfg, config_hash(cfg), args.serial)
        return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"totaluq: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, FormatError) as exc:
        print(f"totaluq: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except numeric as exc:
        print(f"totaluq: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
