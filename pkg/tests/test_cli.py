import json

import numpy as np
import pytest

from totaluq.cli import main
from totaluq.persistence import read_fields, read_posterior

TINY = """
[analog]
nx = 5
ny = 10
cell_size = 1000.0
n_steps = 3

[prior]
length_cells = 3

[data]
n_train = 12
n_test = 3

[surrogate]
n_ens = 3
hidden = 8
train_iters = 20

[inversion]
inverse_iters = 30
"""

PIPELINE = [
    ["generate"],
    ["train"],
    ["invert", "--method", "ri"],
    ["invert", "--method", "de"],
    ["invert", "--method", "ies"],
    ["evaluate", "--method", "ri"],
    ["evaluate", "--method", "ies", "--mode", "forecast"],
]


def run_pipeline(config, out, extra=()):
    codes = [main([*cmd, "--config", str(config), "--out", str(out), "--serial", *extra]) for cmd in PIPELINE]
    return codes


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.ini"
    cfg.write_text(TINY)
    out = root / "run"
    assert run_pipeline(cfg, out) == [0] * len(PIPELINE)
    return cfg, out


def test_pipeline_artifacts_and_manifest(tiny):
    cfg, out = tiny
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["config_hash"]) == 64
    assert man["format_versions"]["UQF1"] == 1
    for name in man["artifacts"]:
        assert (out / name).is_file()
    assert {"generate", "train", "invert_ri", "invert_de", "invert_ies"} <= set(man["commands"])
    kind, u = read_fields(out / "u_train.bin")
    assert kind == "u" and u.shape[:2] == (12, 3)
    assert read_posterior(out / "posterior_ri.bin").samples.shape[0] == 3
    rows = (out / "results.csv").read_text().splitlines()
    assert rows[0].startswith("stage,method") and len(rows) == 6


def test_evaluate_counts_solver_calls(tiny):
    _, out = tiny
    man = json.loads((out / "manifest.json").read_text())
    assert man["commands"]["evaluate_ri_predict"]["seeds"]["solver_calls"] == 3 + 1


def test_coverage_raster_marks_inactive_cells(tiny):
    _, out = tiny
    cov = np.loadtxt(out / "coverage_y_ri.csv", delimiter=",")
    assert cov.shape == (10, 5)
    assert set(np.unique(cov)) <= {-1.0, 0.0, 1.0}
    assert (cov == -1).sum() == 1  # the clipped corner of the analog


def test_serial_reruns_are_byte_identical(tiny, tmp_path):
    cfg, out = tiny
    again = tmp_path / "again"
    assert run_pipeline(cfg, again) == [0] * len(PIPELINE)
    names = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in again.iterdir() if p.name != "manifest.json")
    for name in names:
        assert (out / name).read_bytes() == (again / name).read_bytes(), name


def test_missing_artifact_exit_code(tiny, tmp_path, capsys):
    cfg, _ = tiny
    out = tmp_path / "partial"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["invert", "--method", "ri", "--config", str(cfg), "--out", str(out)]) == 4
    assert "surrogate_rand.bin" in capsys.readouterr().err
    assert main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 4
    (out / "y_ref.bin").unlink()
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 4
    assert "y_ref.bin" in capsys.readouterr().err


def test_modified_artifact_rejected(tiny, tmp_path, capsys):
    cfg, _ = tiny
    out = tmp_path / "edited"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    p = out / "observations.bin"
    p.write_bytes(p.read_bytes()[:-1] + b"\x00")
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 4
    assert "modified" in capsys.readouterr().err


def test_config_errors(tiny, tmp_path):
    cfg, _ = tiny
    bad = tmp_path / "bad.ini"
    bad.write_text("[data]\nn_train = zero\n")
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["generate", "--config", str(tmp_path / "absent.ini"), "--out", str(tmp_path / "x")]) == 2
    # a different seed must not reuse artifacts of another configuration
    out = tmp_path / "seeded"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["generate", "--seed", "-1"])
    assert info.value.code == 2


def test_seed_changes_data(tiny, tmp_path):
    cfg, out = tiny
    other = tmp_path / "s9"
    assert main(["generate", "--config", str(cfg), "--out", str(other), "--seed", "9"]) == 0
    assert (out / "y_train.bin").read_bytes() != (other / "y_train.bin").read_bytes()
    assert json.loads((other / "manifest.json").read_text())["seed"] == 9


def test_numerical_failure_exit_code(tmp_path, capsys):
    # a dry aquifer: recharge far too weak to hold the water table above the base
    bad = tmp_path / "dry.ini"
    bad.write_text(TINY.replace("n_steps = 3", "n_steps = 3\nghb_head = -50\nriver_top = -40\nriver_bottom = -45"))
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "d")]) == 3
    assert "numerical failure" in capsys.readouterr().err
